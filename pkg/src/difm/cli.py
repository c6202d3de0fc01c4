"""Command-line entry point: ``difm gen-data | build-dict | train | eval | predict | explain``.

Config files are flat ``key = value`` lines; keys carry a section prefix
(``gen.``, ``data.``, ``model.``, ``train.``) except the root ``seed``.
``--set key=value`` and the dedicated flags override file values, and every
command that writes outputs also writes its fully resolved config.
Environment variables are never consulted.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import explain as X
from . import model as M
from .data import FieldValueDictionary, build_dictionary, encode_sample, load_schema, pack, read_records
from .errors import ConfigError, DataError, DifmError
from .metrics import confidence_interval, format_ci, partial_auc, write_metrics
from .pipeline import prepare, split_records
from .synth import GeneratorConfig, format_summary, generate
from .training import TrainConfig, train

log = logging.getLogger("difm")

SCORE_CHUNK = 256

MODEL_DEFAULTS = {"model.k": 64, "model.T": 20, "model.variant": "full", "model.mlp_hidden_dims": "64",
                  "model.dropout": 0.2, "model.im_activation": "relu", "model.mlp_activation": "relu"}
TRAIN_DEFAULTS = {f"train.{k}": v for k, v in TrainConfig().to_dict().items() if k != "seed"}
DATA_DEFAULTS = {"data.valid_fraction": 0.2, "data.min_count": 1}


# -- config files ----------------------------------------------------------------

def parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_config(path) -> dict:
    cfg = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        cfg[key.strip()] = parse_value(value)
    return cfg


def write_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        for key in sorted(cfg):
            value = cfg[key]
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")


def resolve(args, defaults: dict) -> dict:
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for item in getattr(args, "set", None) or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg[key.strip()] = parse_value(value)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def section(cfg: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def _int_list(value) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,)
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(v) for v in str(value).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {value!r}") from None


def require_seed(cfg: dict) -> int:
    seed = cfg.get("seed")
    if seed is None:
        raise ConfigError("no seed given: pass --seed or set 'seed' in the config file")
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return seed


# -- commands --------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve(args, {})
    seed = require_seed(cfg)
    opts = section(cfg, "gen")
    out = args.out or opts.pop("out", None)
    opts.pop("out", None)
    if not out:
        raise ConfigError("gen-data needs --out")
    if "vocab_sizes" in opts and isinstance(opts["vocab_sizes"], str):
        opts["vocab_sizes"] = _int_list(opts["vocab_sizes"])
    try:
        gen = GeneratorConfig.from_dict({**opts, "seed": seed})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    summary = generate(gen, out)
    resolved = {"seed": seed, "gen.out": str(out), **{f"gen.{k}": v for k, v in gen.to_dict().items() if k != "seed"}}
    write_config(resolved, Path(out).with_name(Path(out).name.rsplit(".", 1)[0] + ".config.txt"))
    print(format_summary(Path(out).stem, summary))
    return 0


def cmd_build_dict(args) -> int:
    schema = load_schema(args.schema)
    d = build_dictionary(read_records(args.data), schema, args.min_count)
    d.save(args.out)
    print(f"dictionary: {d.size} indices over {d.n_fields} fields -> {args.out}")
    return 0


def _model_config(cfg: dict, dictionary: FieldValueDictionary) -> M.ModelConfig:
    m = section(cfg, "model")
    try:
        return M.ModelConfig(n_fields=dictionary.n_fields, vocab_size=dictionary.size, k=int(m["k"]),
                             T=int(m["T"]), variant=str(m["variant"]),
                             mlp_hidden_dims=_int_list(m["mlp_hidden_dims"]), dropout=float(m["dropout"]),
                             im_activation=str(m["im_activation"]), mlp_activation=str(m["mlp_activation"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad model config: {exc}") from None


def _train_config(cfg: dict, seed: int) -> TrainConfig:
    try:
        return TrainConfig.from_dict({**section(cfg, "train"), "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad train config: {exc}") from None


def cmd_train(args) -> int:
    defaults = {**MODEL_DEFAULTS, **TRAIN_DEFAULTS, **DATA_DEFAULTS}
    cfg = resolve(args, defaults)
    for flag, key in (("data", "data.train"), ("valid", "data.valid"), ("schema", "data.schema"),
                      ("dictionary", "data.dictionary"), ("variant", "model.variant")):
        if getattr(args, flag, None) is not None:
            cfg[key] = getattr(args, flag)
    seed = require_seed(cfg)
    if not cfg.get("data.train"):
        raise ConfigError("train needs a dataset (--data or data.train)")
    out = Path(args.out or cfg.get("out") or "run")
    out.mkdir(parents=True, exist_ok=True)

    records = list(read_records(cfg["data.train"]))
    if cfg.get("data.valid"):
        train_recs, valid_recs = records, list(read_records(cfg["data.valid"]))
    else:
        train_recs, valid_recs = split_records(records, float(cfg["data.valid_fraction"]), seed)
    if cfg.get("data.dictionary"):
        dictionary = FieldValueDictionary.load(cfg["data.dictionary"])
    else:
        if not cfg.get("data.schema"):
            raise ConfigError("train needs --schema (or data.schema) when no dictionary is given")
        dictionary = build_dictionary(train_recs, load_schema(cfg["data.schema"]), int(cfg["data.min_count"]))
    mc = _model_config(cfg, dictionary)
    tc = _train_config(cfg, seed)
    prep = prepare(train_recs, valid_recs, dictionary.schema, mc.T, dictionary=dictionary)
    dictionary.save(out / "dictionary.json")
    write_config(cfg, out / "config.txt")

    with open(out / "train.log", "w") as logf:
        def progress(row):
            line = (f"epoch={row['epoch']} train_loss={row['train_loss']:.6f} "
                    f"valid_pauc={row['valid_pauc']:.6f} best={row['best']:.6f}")
            logf.write(line + "\n")
            logf.flush()
            if not args.quiet:
                print(line)
        result = train(prep.train, prep.valid, mc, tc, progress=progress)

    M.save_model(out / "model.difm", mc, result.params, dictionary.digest(), seed,
                 extra={"train": tc.to_dict(), "best_epoch": result.best_epoch})
    with open(out / "history.tsv", "w") as fh:
        cols = ["epoch", "train_loss", "valid_pauc", "valid_auc", "best"]
        fh.write("\t".join(cols) + "\n")
        for row in result.history:
            fh.write("\t".join(f"{row[c]}" for c in cols) + "\n")
    report = partial_auc(M.predict(prep.valid, result.params, mc), prep.valid.labels, tc.max_fpr)
    write_metrics(out / "metrics.txt", {"auc": report.auc, f"pauc_at_{tc.max_fpr}": report.partial_auc_standardized,
                                        "n_pos": report.n_pos, "n_neg": report.n_neg,
                                        "best_epoch": result.best_epoch, "epochs": len(result.history)})
    print(f"best epoch {result.best_epoch}: valid pauc_at_{tc.max_fpr}={report.partial_auc_standardized:.4f} "
          f"auc={report.auc:.4f} -> {out / 'model.difm'}")
    return 0


def _load(model_path, dictionary_path=None):
    model_path = Path(model_path)
    dpath = Path(dictionary_path) if dictionary_path else model_path.with_name("dictionary.json")
    if not dpath.exists():
        raise DataError(f"dictionary not found at {dpath}; pass --dictionary")
    dictionary = FieldValueDictionary.load(dpath)
    config, params, header = M.load_model(model_path, dictionary)
    return dictionary, config, params


def score_records(records, dictionary, params, config, chunk: int = SCORE_CHUNK):
    """Yield ``(user_id, label, score)`` in input order, ``chunk`` samples at a time."""
    buf = []

    def flush():
        batch = pack(buf, dictionary, config.T)
        y = M.forward(batch, params, config).y_hat
        out = [(s.user_id, s.label, float(p)) for s, p in zip(buf, y)]
        buf.clear()
        return out

    for rec in records:
        buf.append(encode_sample(rec, dictionary, config.T))
        if len(buf) == chunk:
            yield from flush()
    if buf:
        yield from flush()


def cmd_predict(args) -> int:
    dictionary, config, params = _load(args.model, args.dictionary)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for user, _, score in score_records(read_records(args.data), dictionary, params, config):
            out.write(f"{user}\t{score!r}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_eval(args) -> int:
    reports = []
    for path in args.model:
        dictionary, config, params = _load(path, args.dictionary)
        rows = list(score_records(read_records(args.data), dictionary, params, config))
        labels = np.asarray([r[1] for r in rows])
        scores = np.asarray([r[2] for r in rows])
        reports.append(partial_auc(scores, labels, args.max_fpr))
    key = f"pauc_at_{args.max_fpr}"
    paucs = [r.partial_auc_standardized for r in reports]
    values = {"auc": float(np.mean([r.auc for r in reports])), key: float(np.mean(paucs)),
              "n_pos": reports[0].n_pos, "n_neg": reports[0].n_neg, "runs": len(reports)}
    if len(reports) > 1:
        mean, hw = confidence_interval(paucs)
        values.update(mean=mean, ci95=hw, summary=format_ci(mean, hw), ci_method="student-t")
    else:
        values.update(mean=paucs[0], ci95="n/a")
    if args.out:
        write_metrics(args.out, values)
    for k, v in values.items():
        print(f"{k}={v}")
    return 0


def cmd_explain(args) -> int:
    dictionary, config, params = _load(args.model, args.dictionary)
    records = list(read_records(args.data))
    samples = [encode_sample(r, dictionary, config.T) for r in records]
    labeled = all("label" in r for r in records)
    if args.sample is not None:
        chosen = [s for s in samples if s.user_id == args.sample]
        if not chosen:
            raise DataError(f"unknown user_id {args.sample!r}")
        text = X.format_report(None, [X.sample_importance(chosen[0], params, config, dictionary)])
    else:
        rankings = X.rank_wide_weights(params, dictionary, args.top_k, args.min_support, samples, labeled)
        text = X.format_report(rankings, top_k=args.top_k, min_support=args.min_support)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


# -- argument parsing --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="difm", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--seed", type=int, help="root seed (required, here or in the config)")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset with planted signals")
    common(g)
    g.add_argument("--out", help="dataset path; .manifest.json/.schema.json sidecars go next to it")
    g.set_defaults(func=cmd_gen_data)

    b = sub.add_parser("build-dict", help="build a field-value dictionary from a dataset")
    b.add_argument("--data", required=True)
    b.add_argument("--schema", required=True)
    b.add_argument("--min-count", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_dict)

    t = sub.add_parser("train", help="train a model into a run directory")
    common(t)
    t.add_argument("--data", help="training dataset (data.train)")
    t.add_argument("--valid", help="validation dataset; default: seeded split of --data")
    t.add_argument("--schema", help="schema file (data.schema)")
    t.add_argument("--dictionary", help="existing dictionary (data.dictionary)")
    t.add_argument("--variant", choices=M.VARIANTS, help="model variant (model.variant)")
    t.add_argument("--out", help="run directory")
    t.add_argument("--quiet", action="store_true", help="do not echo the progress log")
    t.set_defaults(func=cmd_train)

    def model_args(sp, many=False):
        if many:
            sp.add_argument("--model", "--runs", dest="model", required=True, nargs="+",
                            help="model file(s); several give mean±CI")
        else:
            sp.add_argument("--model", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--dictionary", help="default: dictionary.json next to the model")
        sp.add_argument("--out")

    e = sub.add_parser("eval", help="AUC and standardized partial AUC of model(s) on a dataset")
    model_args(e, many=True)
    e.add_argument("--max-fpr", type=float, default=0.01)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write user_id<TAB>score lines")
    model_args(pr)
    pr.set_defaults(func=cmd_predict)

    x = sub.add_parser("explain", help="wide-weight risk rankings or per-sample importance")
    model_args(x)
    x.add_argument("--top-k", type=int, default=4)
    x.add_argument("--min-support", type=int, default=1)
    x.add_argument("--sample", help="user_id for a per-sample report")
    x.set_defaults(func=cmd_explain)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except DifmError as exc:
        print(f"difm {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
