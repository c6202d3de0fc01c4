import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from difm import model as M
from difm.data import Packed
from difm.errors import ConfigError, DataError
from difm.fm import fm_bruteforce
from difm.training import toy_problem


def one_sample(events, T, labels=(1.0,)):
    """``events``: list (oldest first) of per-field ``(index, value)`` pairs."""
    N = len(events[0])
    idx = np.zeros((1, T, N), dtype=np.int64)
    val = np.zeros((1, T, N))
    for t, ev in enumerate(events):
        slot = T - len(events) + t
        for n, (i, x) in enumerate(ev):
            idx[0, slot, n], val[0, slot, n] = i, x
    return Packed(idx, val, np.array([len(events)]), np.array(labels), ["s"])


def cfg(**kw):
    base = dict(n_fields=3, vocab_size=12, k=4, T=3, dropout=0.0)
    base.update(kw)
    return M.ModelConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = M.ModelConfig(n_fields=5, vocab_size=100)
        assert (c.k, c.T, c.mlp_hidden_dims, c.dropout) == (64, 20, (64,), 0.2)

    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            cfg(variant="gamma")

    @pytest.mark.parametrize("variant,fields_on,events_on", [
        ("full", True, True), ("same", True, True), ("alpha", True, False), ("beta", False, True)])
    def test_variant_branches(self, variant, fields_on, events_on):
        c = cfg(variant=variant)
        assert c.use_fields is fields_on and c.use_events is events_on

    def test_mlp_input_width_fixed(self):
        for v in M.VARIANTS:
            p = M.init_params(cfg(variant=v), np.random.default_rng(0))
            assert p["mlp.W0"].shape == (12, 64)


class TestBranches:
    def test_constant_field_closed_form(self):
        c = cfg()
        p = M.init_params(c, np.random.default_rng(0))
        ev = [(0, 1.0), (4, 1.0), (8, 0.3)]
        batch = one_sample([ev, ev, ev], T=3)
        _, _, F, _ = M.field_variations_forward(batch, p, c)
        v = p["emb"][0]
        assert np.allclose(F[0, 0], math.comb(3, 2) * v * v, rtol=1e-12, atol=0)

    def test_single_event_no_field_pairs(self):
        c = cfg()
        p = M.init_params(c, np.random.default_rng(1))
        batch = one_sample([[(1, 1.0), (5, 1.0), (9, 2.0)]], T=3)
        f, a, F, _ = M.field_variations_forward(batch, p, c)
        assert not F.any()
        h3 = np.maximum(p["fim.b3"], 0)
        assert np.allclose(f[0], h3 * a[0].sum())

    def test_field_vectors_match_bruteforce(self):
        c = cfg()
        rng = np.random.default_rng(2)
        p = M.init_params(c, rng)
        events = [[(int(rng.integers(4)) + 4 * n, float(rng.normal())) for n in range(3)] for _ in range(3)]
        batch = one_sample(events, T=3)
        _, _, F, _ = M.field_variations_forward(batch, p, c)
        for n in range(3):
            ids = [ev[n][0] for ev in events]
            xs = np.array([ev[n][1] for ev in events])
            assert np.allclose(F[0, n], fm_bruteforce(xs, p["emb"][ids]), rtol=1e-10, atol=1e-14)

    def test_event_vector_hand_value(self):
        c = cfg(n_fields=2, vocab_size=2, k=2, T=2)
        p = M.init_params(c, np.random.default_rng(0))
        p["emb"] = np.array([[1.0, 2.0], [3.0, 4.0]])
        batch = one_sample([[(0, 1.0), (1, 1.0)]], T=2)
        _, _, e_T, E, _, _ = M.field_interactions_forward(batch, p, c)
        assert e_T[0].tolist() == [3.0, 8.0]

    def test_single_feature_event_is_zero(self):
        c = cfg()
        p = M.init_params(c, np.random.default_rng(0))
        batch = one_sample([[(1, 1.0), (5, 0.0), (9, 0.0)]], T=3)
        _, _, e_T, _, _, _ = M.field_interactions_forward(batch, p, c)
        assert not e_T.any()

    def test_history_of_one_event(self):
        c = cfg()
        p = M.init_params(c, np.random.default_rng(0))
        ev = [(1, 1.0), (5, 1.0), (9, 1.0)]
        trace = M.forward(one_sample([ev, ev], T=3), p, c)
        assert trace.sample_event_weights(0).tolist() == [1.0]

    def test_empty_history_zero_pool(self):
        c = cfg()
        p = M.init_params(c, np.random.default_rng(0))
        trace = M.forward(one_sample([[(1, 1.0), (5, 1.0), (9, 1.0)]], T=3), p, c)
        assert not trace.e_his.any()
        assert trace.sample_event_weights(0).size == 0


class TestWide:
    def test_zero(self):
        c = cfg()
        p = M.init_params(c, np.random.default_rng(0))
        assert M.wide_score(one_sample([[(1, 1.0), (5, 1.0), (9, 2.0)]], 3), p).tolist() == [0.0]

    def test_single_term(self):
        c = cfg(n_fields=1, vocab_size=3)
        p = M.init_params(c, np.random.default_rng(0))
        p["wide.w"][2] = 0.7
        p["wide.b"][0] = 0.1
        assert M.wide_score(one_sample([[(2, 1.0)]], 3), p)[0] == pytest.approx(0.8, abs=1e-15)

    def test_repeated_value_counted_per_event(self):
        c = cfg(n_fields=1, vocab_size=3)
        p = M.init_params(c, np.random.default_rng(0))
        p["wide.w"][1] = 0.5
        assert M.wide_score(one_sample([[(1, 1.0)]] * 3, 3), p)[0] == 1.5

    def test_numerical_scales_weight(self):
        c = cfg(n_fields=1, vocab_size=3)
        p = M.init_params(c, np.random.default_rng(0))
        p["wide.w"][0] = 2.0
        assert M.wide_score(one_sample([[(0, -1.25)]], 3), p)[0] == -2.5


class TestForward:
    def test_zero_output_is_half(self):
        c = cfg()
        p = M.init_params(c, np.random.default_rng(0))
        p["mlp.W_out"][:] = 0.0
        trace = M.forward(one_sample([[(1, 1.0), (5, 1.0), (9, 1.0)]], 3), p, c)
        assert trace.y_hat.tolist() == [0.5]

    def test_eval_deterministic(self):
        c, p, batch = toy_problem(seed=3)
        a, b = M.forward(batch, p, c), M.forward(batch, p, c)
        for name in ("f", "e_his", "e_T", "s", "logit", "y_hat", "field_weights", "event_weights"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_trace_invariants(self):
        c, p, batch = toy_problem(seed=4)
        t = M.forward(batch, p, c)
        assert np.max(np.abs(t.y_hat - 1 / (1 + np.exp(-t.logit)))) <= 1e-12
        assert np.all(np.abs(t.field_weights.sum(axis=1) - 1) <= 1e-12)
        has_history = batch.n_events > 1
        sums = t.event_weights.sum(axis=1)
        assert np.all(np.abs(sums[has_history] - 1) <= 1e-12)
        assert np.all(sums[~has_history] == 0)
        assert t.s.shape == (len(batch), 3 * c.k)
        assert np.array_equal(t.s, np.concatenate([t.f, t.e_his, t.e_T], axis=1))

    def test_alpha_vs_full_without_history_differ_only_through_current_event(self):
        c_full = cfg()
        p = M.init_params(c_full, np.random.default_rng(5))
        batch = one_sample([[(1, 1.0), (5, 1.0), (9, 0.5)]], 3)
        full = M.forward(batch, p, c_full)
        alpha = M.forward(batch, p, replace(c_full, variant="alpha"))
        assert np.array_equal(full.f, alpha.f)
        assert not full.e_his.any() and not alpha.e_his.any()
        assert full.e_T.any() and not alpha.e_T.any()
        # zeroing the current-event slot of s in the full model reproduces alpha
        s = full.s.copy()
        s[:, 2 * c_full.k:] = 0
        h = np.maximum(s @ p["mlp.W0"] + p["mlp.b0"], 0)
        logit = h @ p["mlp.W_out"] + p["mlp.b_out"][0] + full.wide
        assert np.allclose(logit, alpha.logit, rtol=1e-13, atol=1e-15)

    def test_dropout_train_only(self):
        c, p, batch = toy_problem(seed=1)
        c = replace(c, dropout=0.5)
        ev = M.forward(batch, p, c)
        tr = M.forward(batch, p, c, train=True, rng=np.random.default_rng(0))
        assert not np.array_equal(ev.logit, tr.logit)
        with pytest.raises(ConfigError):
            M.forward(batch, p, c, train=True)

    def test_layout_mismatch(self):
        c, p, batch = toy_problem()
        with pytest.raises(DataError):
            M.forward(batch, p, replace(c, T=5))


@given(st.sampled_from(["alpha", "beta"]), st.integers(0, 2**31 - 1))
def test_disabled_branch_parameters_do_not_matter(variant, seed):
    c, p, batch = toy_problem(cfg(variant=variant), seed=seed % 50)
    before = M.forward(batch, p, c).y_hat
    prefix = "eim." if variant == "alpha" else "fim."
    rng = np.random.default_rng(seed)
    q = {k: (rng.normal(size=a.shape) * 10 if k.startswith(prefix) else a) for k, a in p.items()}
    assert np.array_equal(M.forward(batch, q, c).y_hat, before)


class TestLoss:
    def test_ln2(self):
        assert M.sample_loss(0.0, 1) == pytest.approx(math.log(2), rel=1e-15)

    def test_saturated(self):
        assert M.sample_loss(30.0, 1) == pytest.approx(math.log1p(math.exp(-30.0)), rel=1e-12)
        assert M.sample_loss(30.0, 1) == pytest.approx(9.36e-14, rel=1e-3)

    @given(st.floats(-700, 700))
    def test_symmetry(self, z):
        assert M.sample_loss(z, 1) == M.sample_loss(-z, 0)

    def test_no_overflow(self):
        assert np.isfinite(M.sample_loss(-1e4, 1))


class TestBackward:
    @pytest.mark.parametrize("variant", M.VARIANTS)
    def test_gradient_check_variants(self, variant):
        from difm.training import gradient_check
        report = gradient_check(cfg(variant=variant), tolerance=1e-4, seed=1)
        assert report.passed, report.worst

    def test_saturated_batch_zero_gradient(self):
        c, p, batch = toy_problem(seed=2)
        p["wide.w"][:] = 0.0
        p["wide.b"][0] = 0.0
        batch.labels[:] = 1.0
        # shift every logit far onto the side of its label
        p["mlp.b_out"][0] = 200.0 - M.forward(batch, p, c).mlp_out.min()
        g = M.backward(M.forward(batch, p, c), p, c, l2=0.0)
        assert math.sqrt(sum(float(np.sum(a * a)) for a in g.values())) < 1e-8

    def test_doubling_l2_doubles_penalty_gradient(self):
        c, p, batch = toy_problem(seed=0)
        t = M.forward(batch, p, c)
        g0 = M.backward(t, p, c, 0.0)
        g1 = M.backward(t, p, c, 1e-3)
        g2 = M.backward(t, p, c, 2e-3)
        for name in p:
            assert np.allclose(g2[name] - g0[name], 2 * (g1[name] - g0[name]), rtol=1e-9, atol=1e-15)
            if M.is_bias(name):
                assert np.array_equal(g1[name], g0[name])


class TestPersistence:
    def test_roundtrip_preserves_predictions(self, tmp_path):
        c, p, batch = toy_problem(cfg(variant="same"), seed=1)
        path = tmp_path / "m.difm"
        M.save_model(path, c, p, "abc", seed=7)
        c2, p2, header = M.load_model(path)
        assert c2 == c and header["seed"] == 7
        assert np.max(np.abs(M.predict(batch, p2, c2) - M.predict(batch, p, c))) <= 1e-12

    def test_bytes_stable(self, tmp_path):
        c, p, _ = toy_problem()
        M.save_model(tmp_path / "a", c, p, "d")
        M.save_model(tmp_path / "b", c, p, "d")
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_wrong_dictionary_rejected(self, tmp_path, dictionary):
        c, p, _ = toy_problem()
        M.save_model(tmp_path / "m", c, p, "not-the-digest")
        with pytest.raises(DataError, match="dictionary"):
            M.load_model(tmp_path / "m", dictionary)

    def test_not_a_model(self, tmp_path):
        (tmp_path / "x").write_bytes(b"hello\n")
        with pytest.raises(DataError):
            M.load_model(tmp_path / "x")
