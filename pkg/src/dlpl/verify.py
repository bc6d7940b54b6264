"""Self-check suites: gradient checks, discretisation partition, count normalisation,
homography oracles, EMA closed form and reconstruction invariances.

Every check looks operations up through their modules at call time, so a
patched operation is what gets verified.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import pdd as PD
from . import pht as PH
from . import pia as PI
from . import space as SP
from . import tensor as T
from . import vr as VR

OP_TOL = 1e-5
COMPOSITE_TOL = 1e-4
KINK_MARGIN = 1e-3
SEEDS = (0, 1, 2)


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.suite}:{self.name} {self.detail}".rstrip()


# ------------------------------------------------------------------ input helpers

def away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def distinct_values(rng, shape, gap=0.01):
    """Random values whose pairwise gaps along every axis exceed ``gap``."""
    n = int(np.prod(shape))
    base = rng.permutation(n) * gap * 2.0 + rng.uniform(-gap / 4, gap / 4, size=n)
    return (base - base.mean()).reshape(shape)


def pdd_margin(normed: np.ndarray, m: int) -> float:
    """Smallest distance of normalised prototype values from any kink.

    Kinks are the spire thresholds (2k-1)/(2M), the spire apexes k/M and the
    per-channel min/max selections.  Exact 0 and 1 (the selected extremes) are
    skipped: their normalised value does not move under perturbation.
    """
    ks = np.arange(1, m + 1)
    kinks = np.concatenate([(2 * ks - 1) / (2.0 * m), ks / m])
    inner = normed[(normed > 0) & (normed < 1)]
    d = np.abs(inner[:, None] - kinks[None, :]).min() if inner.size else 1.0
    srt = np.sort(normed, axis=-2)
    gaps = min((srt[..., 1, :] - srt[..., 0, :]).min(), (srt[..., -1, :] - srt[..., -2, :]).min())
    return float(min(d, gaps))


def _tiny_pdd(rng, c=3, c_out=4, heads=2):
    return PD.init_pdd(rng, c, c_out, heads)


def _pdd_input(seed, b, n, c, m, params, pe):
    """Draw (I, S) until the prototype sits at least KINK_MARGIN from every kink."""
    rng = np.random.default_rng([seed, 7])
    for _ in range(500):
        feat = rng.normal(size=(b, n, c))
        scores = rng.uniform(size=(b, n))
        with T.no_grad():
            proto = PD.pointness_attention(T.Tensor(feat), T.Tensor(scores), pe, params)
            normed = PD.normalize_channels(proto).data
        if pdd_margin(normed, m) > KINK_MARGIN:
            return feat, scores
    raise RuntimeError("no off-kink input found")


# ------------------------------------------------------------------ gradient suite

def _op_cases(seed: int) -> list:
    rng = np.random.default_rng(seed)
    att = T.init_attention(rng, 8, prefix="a.")
    mlp_p = T.init_mlp(rng, [5, 7, 3], prefix="m.")
    labels = rng.integers(0, 4, size=(3, 5))
    w6 = rng.normal(size=(6, 4))
    return [
        ("add", lambda a, b: T.add(a, b), [rng.normal(size=(3, 4)), rng.normal(size=(4,))]),
        ("sub", lambda a, b: T.sub(a, b), [rng.normal(size=(3, 1)), rng.normal(size=(3, 4))]),
        ("mul", lambda a, b: T.mul(a, b), [rng.normal(size=(2, 3, 4)), rng.normal(size=(3, 1))]),
        ("div", lambda a, b: T.div(a, b), [rng.normal(size=(3, 4)), away_from_zero(rng, (3, 4), 0.5)]),
        ("safe_div", lambda a, b: T.safe_div(a, b), [rng.normal(size=(3, 4)), away_from_zero(rng, (1, 4), 0.5)]),
        ("abs", lambda a: T.tabs(a), [away_from_zero(rng, (3, 4))]),
        ("gelu", lambda a: T.gelu(a), [rng.normal(size=(3, 4)) * 2]),
        ("square", lambda a: T.square(a), [rng.normal(size=(3, 4))]),
        ("reshape", lambda a: T.reshape(a, (4, 3)), [rng.normal(size=(3, 4))]),
        ("transpose", lambda a: T.transpose(a, (2, 0, 1)), [rng.normal(size=(2, 3, 4))]),
        ("concat", lambda a, b: T.concat([a, b], axis=-1), [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))]),
        ("sum", lambda a: T.tsum(a, axis=1, keepdims=True), [rng.normal(size=(3, 4, 2))]),
        ("mean", lambda a: T.mean(a, axis=0), [rng.normal(size=(3, 4))]),
        ("amax", lambda a: T.amax(a, axis=0), [distinct_values(rng, (5, 3))]),
        ("amin", lambda a: T.amin(a, axis=1, keepdims=True), [distinct_values(rng, (3, 5))]),
        ("norm", lambda a: T.norm(a, axes=(-2, -1)), [rng.normal(size=(2, 3, 4))]),
        ("matmul", lambda a, b: T.matmul(a, b), [rng.normal(size=(5, 7)), rng.normal(size=(7, 3))]),
        ("matmul_batched", lambda a, b: T.matmul(a, b), [rng.normal(size=(2, 4, 3)), rng.normal(size=(3, 5))]),
        ("softmax_rows", lambda a: T.softmax_rows(a, 0.7), [rng.normal(size=(3, 4))]),
        ("layer_norm", lambda a: T.layer_norm(a), [rng.normal(size=(4, 6))]),
        ("cross_entropy", lambda a: T.cross_entropy(a, labels), [rng.normal(size=(3, 5, 4))]),
        ("mlp", lambda a: T.mlp(a, mlp_p, prefix="m."), [rng.normal(size=(4, 5))]),
        ("attention_core", lambda q, k, v: T.attention_core(q, k, v, 0.5),
         [rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 3))]),
        ("multi_head_attention", lambda q, k, v: T.multi_head_attention(q, k, v, 2, att, prefix="a."),
         [rng.normal(size=(4, 8)), rng.normal(size=(4, 8)), rng.normal(size=(4, 8))]),
        ("cooccurrence_moment", lambda d: PD.cooccurrence_moment(d, w6), [rng.uniform(size=(3, 6, 4))]),
    ]


def _pdd_cases(seed: int) -> list:
    rng = np.random.default_rng([seed, 1])
    c, m, h, w = 3, 2, 4, 4
    n = h * w
    params = _tiny_pdd(rng, c=c, c_out=4, heads=2)
    pe = T.pos_enc_2d(h, w, c + 1)[..., :c].reshape(n, c)
    feat, scores = _pdd_input(seed, 2, n, c, m, params, pe)
    shape = VR.VRShape(c=c, h=h, w=w, m=m, c_in=4, grid=2, agg_dim=8, heads=2)
    vr_p = VR.init_vr(rng, shape)
    vr_p["pos"] = T.Tensor(rng.normal(scale=0.1, size=(n, c)), requires_grad=True)
    d_in = rng.uniform(0.6, 1.0, size=(2, m, n, c)) * (rng.uniform(size=(2, m, n, c)) > 0.4)

    def pdd_chain(f):
        return PD.pdd_forward(f, T.Tensor(scores), params, m, 2, pe=pe).perspective

    def pdd_vr(f):
        return VR.reconstruct(pdd_chain(f), shape, vr_p)

    return [
        ("pointness_attention", lambda f: PD.pointness_attention(f, T.Tensor(scores), pe, params), [feat]),
        ("normalize_channels", lambda f: PD.normalize_channels(f), [distinct_values(rng, (2, n, c))]),
        ("perspective_graph", lambda d: PD.perspective_graph(PD.cooccurrence(d), pe, params).graph, [d_in]),
        ("perspective_aggregate", lambda g: PD.perspective_aggregate(g, params, 2),
         [rng.normal(size=(m, m, 4))]),
        ("reconstruct", lambda p: VR.reconstruct(p, shape, vr_p), [rng.normal(size=(m * m, 4))]),
        ("reconstruction_loss", lambda a, b: VR.reconstruction_loss(a, b),
         [rng.normal(size=(n, c)), rng.normal(size=(n, c))]),
        ("pia", lambda a, b: PI.pia(a, b), [rng.normal(size=(n, c)), rng.normal(size=(n, c))]),
        ("pdd_chain", pdd_chain, [feat], COMPOSITE_TOL),
        ("pdd_vr", pdd_vr, [feat], COMPOSITE_TOL),
    ]


def _block_case(seed: int) -> tuple:
    """I -> PIA output through a full block on the transformed path, space frozen."""
    rng = np.random.default_rng([seed, 2])
    shape = PI.BlockShape(c=4, h=3, w=3, m=2, c_prime=4, heads=2, rec_grid=2)
    params = PI.init_block(rng, shape)
    params["vr.pos"] = T.Tensor(rng.normal(scale=0.1, size=(9, 4)), requires_grad=True)
    pe = T.pos_enc_2d(3, 3, 4).reshape(9, 4)
    pdd_p = {k[4:]: v for k, v in params.items() if k.startswith("pdd.")}
    for attempt in range(200):
        feat = rng.normal(size=(1, 9, 4))
        scores = rng.uniform(size=(1, 9))
        with T.no_grad():
            xn = T.layer_norm(T.Tensor(feat))
            proto = PD.pointness_attention(xn, T.Tensor(scores), pe, pdd_p)
            normed = PD.normalize_channels(proto).data
            if pdd_margin(normed, shape.m) <= KINK_MARGIN:
                continue
            p0 = PD.pdd_forward(xn, T.Tensor(scores), pdd_p, shape.m, shape.heads, pe=pe).perspective.data
        space = SP.PerspectiveSpace.from_entries(
            [p0[0] + rng.normal(scale=0.05, size=p0[0].shape), np.roll(p0[0], 1, axis=0)])
        frozen = PH.FrozenTransform(p0, space)

        def block(f, frozen=frozen, space=space):
            y, _, _, _ = PI.block_forward(f, T.Tensor(scores), params, shape, space,
                                          PI.TRANSFORMED, transform=frozen)
            return y

        return ("block_transformed", block, [feat], COMPOSITE_TOL)
    raise RuntimeError("no off-kink block input found")


def grad_cases(seed: int) -> list:
    cases = _op_cases(seed) + _pdd_cases(seed) + [_block_case(seed)]
    rng = np.random.default_rng([seed, 3])
    p = rng.normal(size=(4, 3))
    space = SP.PerspectiveSpace.from_entries([p + 0.1 * rng.normal(size=p.shape), p[::-1]])
    frozen = PH.FrozenTransform(p, space)
    cases.append(("transform_perspective", lambda q: frozen(q)[0], [p]))
    return cases


def suite_grad(seeds=SEEDS) -> list:
    out = []
    for seed in seeds:
        for case in grad_cases(seed):
            name, fn, inputs = case[:3]
            tol = case[3] if len(case) > 3 else OP_TOL
            rep = T.gradcheck(fn, inputs, tolerance=tol, seed=seed, name=name)
            worst = max(rep.errors) if rep.errors else 0.0
            detail = f"seed={seed} rel.err={worst:.2e} tol={tol:.0e}"
            if not rep.passed:
                detail += "\n" + str(rep)
            out.append(CheckResult("grad", name, rep.passed, detail))
    return out


# ------------------------------------------------------------------ discretisation

def suite_partition(trials: int = 100, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    worst_active, bad_sym, bad_off = 0, 0.0, 0.0
    for _ in range(trials):
        m = int(rng.integers(2, 6))
        feat = rng.normal(size=(int(rng.integers(4, 20)), int(rng.integers(1, 5))))
        normed = PD.normalize_channels(T.Tensor(feat))
        d = PD.discretize(normed, PD.compute_levels(normed.data, m), 1.0)
        worst_active = max(worst_active, int((d.data > 0).sum(axis=0).max()))
        dh = PD.cooccurrence(d).data
        bad_sym = max(bad_sym, float(np.abs(dh - np.swapaxes(dh, 0, 1)).max()))
        off = dh * (1.0 - np.eye(m))[:, :, None, None]
        bad_off = max(bad_off, float(np.abs(off).max()))
    return [CheckResult("partition", "at_most_one_level", worst_active <= 1, f"max active={worst_active}"),
            CheckResult("partition", "cooccurrence_symmetric", bad_sym == 0.0, f"max asym={bad_sym:.1e}"),
            CheckResult("partition", "off_diagonal_zero", bad_off == 0.0, f"max off-diag={bad_off:.1e}")]


def suite_normalization(trials: int = 100, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        m, n, c = int(rng.integers(2, 6)), int(rng.integers(4, 20)), int(rng.integers(1, 5)) * 2
        params = PD.init_pdd(rng, c, 4, 2)
        pe = T.pos_enc_2d(1, n, c).reshape(n, c)
        normed = PD.normalize_channels(T.Tensor(rng.normal(size=(n, c))))
        d = PD.discretize(normed, PD.compute_levels(normed.data, m), 1.0)
        counts = PD.perspective_graph_from_levels(d, pe, params).counts.data
        live = d.data.sum(axis=(0, 1)) > 0
        worst = max(worst, float(np.abs(counts.sum(axis=(0, 1))[live] - 1.0).max(initial=0.0)))
    return [CheckResult("normalization", "counts_sum_to_one", worst <= 1e-9, f"max |sum-1|={worst:.1e}")]


# ------------------------------------------------------------------ homography

def random_homography(rng, strength: float = 0.3) -> np.ndarray:
    h = np.eye(3) + rng.uniform(-strength, strength, size=(3, 3)) * np.array([[1, 1, 1], [1, 1, 1], [0.5, 0.5, 0]])
    return PH.canonical(h)


def apply_h(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    ph = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    return ph[:, :2] / ph[:, 2:]


def suite_pht(draws: int = 20, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    pts = PH.cell_centers(4)
    worst = 0.0
    for _ in range(draws):
        h = random_homography(rng)
        est = PH.estimate_homography(PH.Correspondences(pts, apply_h(h, pts), np.ones(len(pts))))
        worst = max(worst, float(np.linalg.norm(est.matrix - h)))
    res = [CheckResult("pht", "dlt_recovery", worst < 1e-6, f"{draws} draws, max Frobenius err={worst:.1e}")]
    p = rng.normal(size=(16, 3))
    ident = float(np.abs(PH.warp_grid(T.Tensor(p), np.eye(3)).data - p).max())
    res.append(CheckResult("pht", "identity_warp", ident < 1e-10, f"max err={ident:.1e}"))
    pitch = 2.0 / 3.0
    shift = np.array([[1.0, 0, pitch], [0, 1, 0], [0, 0, 1]])
    got = PH.warp_grid(T.Tensor(p), shift).data.reshape(4, 4, 3)
    want = np.zeros((4, 4, 3))
    want[:, 1:] = p.reshape(4, 4, 3)[:, :-1]
    err = float(np.abs(got - want).max())
    res.append(CheckResult("pht", "one_cell_shift", err < 1e-10, f"max err={err:.1e}"))
    return res


# ------------------------------------------------------------------ perspective space

def suite_ema(steps: int = 50, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=12)
    sp = SP.PerspectiveSpace.from_entries(np.zeros((1, 12)), alpha=0.9)
    worst = 0.0
    for n in range(1, steps + 1):
        SP.ema_update(sp, v[None])
        worst = max(worst, float(np.abs(sp.entries[0] - (1 - 0.9 ** n) * v).max()))
    res = [CheckResult("ema", "closed_form", worst <= 1e-10, f"{steps} updates, max err={worst:.1e}")]
    sp = SP.PerspectiveSpace.empty(5, 12, 0.9, seed=seed)
    pi_err = resp_err = 0.0
    for _ in range(30):
        SP.ema_update(sp, rng.normal(size=(3, 12)))
        pi_err = max(pi_err, abs(sp.pi.sum() - 1.0))
        _, r = SP.log_density_and_responsibilities(sp, rng.normal(size=12))
        resp_err = max(resp_err, abs(r.sum() - 1.0))
    res.append(CheckResult("ema", "pi_sums_to_one", pi_err <= 1e-12, f"max err={pi_err:.1e}"))
    res.append(CheckResult("ema", "responsibilities_sum_to_one", resp_err <= 1e-12, f"max err={resp_err:.1e}"))
    return res


# ------------------------------------------------------------------ reconstruction

def random_orthogonal(rng, c: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(c, c)))
    return q * np.sign(np.diag(r))


def suite_vr(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    feat = rng.normal(size=(64, 8))
    same = float(VR.reconstruction_loss(T.Tensor(feat), T.Tensor(feat)).data)
    rot = float(VR.reconstruction_loss(T.Tensor(feat), T.Tensor(feat @ random_orthogonal(rng, 8))).data)
    hand = float(VR.reconstruction_loss(T.Tensor(np.array([[1.0], [0.0]])), T.Tensor(np.zeros((2, 1)))).data)
    return [CheckResult("vr", "identity_zero", same < 1e-10, f"loss={same:.1e}"),
            CheckResult("vr", "orthogonal_zero", rot < 1e-10, f"loss={rot:.1e}"),
            CheckResult("vr", "hand_value", abs(hand - 0.5) < 1e-12, f"loss={hand}")]


SUITES = {
    "grad": suite_grad,
    "partition": suite_partition,
    "normalization": suite_normalization,
    "pht": suite_pht,
    "ema": suite_ema,
    "vr": suite_vr,
}


def run_suites(names=None, echo=None) -> list:
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")
    results = []
    for name in names:
        t0 = time.time()
        res = SUITES[name]()
        results.extend(res)
        if echo is not None:
            for r in res:
                echo(r.line())
            ok = all(r.passed for r in res)
            echo(f"suite {name}: {'PASS' if ok else 'FAIL'} ({len(res)} checks, {time.time() - t0:.1f}s)")
    return results
