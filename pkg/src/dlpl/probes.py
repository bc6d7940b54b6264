"""Small optimisation probes: can the reconstruction path fit, can the model overfit one batch."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import pdd as PD
from . import tensor as T
from . import vr as VR
from .optim import Adam
from .tensor import Tensor


@dataclass
class ProbeResult:
    initial: float
    final: float
    history: list = field(default_factory=list)

    @property
    def reduction(self) -> float:
        return 1.0 - self.final / self.initial if self.initial > 0 else 0.0


def reconstruction_trainability(seed: int = 0, steps: int = 500, lr: float = 0.01, c: int = 8,
                                h: int = 8, w: int = 8, m: int = 4, c_prime: int = 32) -> ProbeResult:
    """Fit the reconstruction parameters to one fixed (I, P = PDD(I, S)) pair."""
    rng = np.random.default_rng(seed)
    feat = rng.normal(size=(1, h * w, c))
    scores = rng.random((1, h * w))
    pdd_params = PD.init_pdd(rng, c, c_prime, 4)
    with T.no_grad():
        p = PD.pdd_forward(Tensor(feat), Tensor(scores), pdd_params, m, 4, hw=(h, w)).perspective
    shape = VR.VRShape(c, h, w, m, c_prime, grid=min(4, h, w))
    params = VR.init_vr(rng, shape)
    opt = Adam(params, lr)
    target = Tensor(feat)
    hist = []
    for _ in range(steps):
        opt.zero_grad()
        loss = VR.reconstruction_loss(target, VR.reconstruct(p, shape, params))
        loss.backward()
        hist.append(float(loss.data))
        opt.step()
    with T.no_grad():
        final = float(VR.reconstruction_loss(target, VR.reconstruct(p, shape, params)).data)
    return ProbeResult(hist[0], final, hist)


def overfit_one_batch(model, images: np.ndarray, labels: np.ndarray, scores: np.ndarray,
                      steps: int = 300, lr: float = 1e-3, mode: str = "self", target: float = 0.05) -> ProbeResult:
    """Train on a single batch until cross-entropy drops below ``target`` or ``steps`` run out."""
    opt = Adam(model.params, lr)
    flat = labels.reshape(len(labels), -1).astype(np.int64)
    hist = []
    lam = model.cfg.rec_weight
    for _ in range(steps):
        opt.zero_grad()
        res = model.forward(images, scores, mode)
        ce = T.cross_entropy(res.logits, flat)
        total = ce if lam == 0 or not res.rec_losses else T.add(ce, T.mul(res.rec_loss, lam))
        total.backward()
        opt.step()
        if res.perspectives:
            model.update_spaces(res.perspectives)
        hist.append(float(ce.data))
        if hist[-1] < target:
            break
    return ProbeResult(hist[0], hist[-1], hist)
