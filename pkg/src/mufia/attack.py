"""The multiplicative filter-bank attack.

For each image the luma plane is split into ``N x N`` blocks, transformed
with the orthonormal DCT, multiplied by a shared filter bank ``Q`` and
transformed back.  ``Q`` starts at all ones (identity) and is updated with
Adam to minimize ``L_adv + lambda * L_sim``.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import classifier as clf
from .analytics import psnr
from .blockdct import (
    apply_filter_bank,
    assemble_blocks,
    dct2,
    filter_bank_gradient,
    idct2,
    ones_filter_bank,
    partition_blocks,
)
from .colorspace import luma_gradient, rgb_to_ycbcr, ycbcr_to_rgb
from .losses import (
    adversarial_loss,
    cosine_similarity,
    cross_entropy_adversarial_loss,
    one_hot,
    similarity_loss,
    total_loss,
)
from .optim import BETA1, BETA2, EPS, AdamState, adam_step
from .validation import check_block_size, check_image, check_images, check_labels

MODES = ("ground-truth", "decision-flip")
LOSS_KINDS = ("cosine", "cross-entropy")


@dataclass(frozen=True)
class AttackConfig:
    kappa: float = 0.99
    lam: float = 20.0
    n_iters: int = 100
    lr: float = 0.1
    block_size: int = 32
    beta1: float = BETA1
    beta2: float = BETA2
    adam_eps: float = EPS
    mode: str = "ground-truth"
    loss_kind: str = "cosine"
    seed: int = 0
    batch: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        if not 0 <= self.kappa <= 1:
            raise ValueError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.n_iters < 0:
            raise ValueError(f"n_iters must be >= 0, got {self.n_iters}")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.block_size < 2:
            raise ValueError(f"block_size must be >= 2, got {self.block_size}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if np.dtype(self.dtype).kind != "f":
            raise ValueError(f"dtype must be a floating type, got {self.dtype!r}")

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return {key: d[key] for key in (
            "kappa", "lambda", "n_iters", "lr", "block_size", "beta1", "beta2", "adam_eps",
            "mode", "loss_kind", "seed", "batch", "dtype")}


class LumaSpectrum(NamedTuple):
    """Per-image state that does not depend on ``Q``."""

    cb: np.ndarray
    cr: np.ndarray
    coeffs: np.ndarray  # (rows, cols, N, N) block DCT of the luma plane


class PipelineCache(NamedTuple):
    spectrum: LumaSpectrum
    filtered: np.ndarray
    active: np.ndarray


def luma_spectrum(image, block_size):
    image = np.asarray(image)
    check_block_size(image.shape[0], image.shape[1], block_size)
    y, cb, cr = rgb_to_ycbcr(image)
    return LumaSpectrum(cb, cr, dct2(partition_blocks(y, block_size)))


def render(q, spectrum):
    """Filter the cached spectrum with ``q`` and rebuild the RGB image."""
    filtered = apply_filter_bank(spectrum.coeffs, q)
    y_hat = assemble_blocks(idct2(filtered))
    adv, active = ycbcr_to_rgb((y_hat, spectrum.cb, spectrum.cr))
    return adv, PipelineCache(spectrum, filtered, active)


def forward_pipeline(q, image):
    """``(adversarial image, cache)`` for filter bank ``q`` applied to ``image``."""
    q = np.asarray(q)
    image = check_image(image)
    return render(q, luma_spectrum(image.astype(q.dtype, copy=False), q.shape[0]))


def pipeline_gradient(cache, grad_adv_image, grad_filtered=None):
    """Gradient w.r.t. ``Q`` of a functional with image gradient ``grad_adv_image``.

    ``grad_filtered`` optionally adds a gradient taken directly w.r.t. the
    filtered DCT coefficients (the similarity term).
    """
    grad_adv_image = np.asarray(grad_adv_image)
    if grad_adv_image.shape != cache.active.shape:
        raise ValueError(
            f"gradient shape {grad_adv_image.shape} does not match cached image {cache.active.shape}"
        )
    n = cache.filtered.shape[-1]
    grad_y = luma_gradient(grad_adv_image, cache.active)
    # idct2 is orthonormal, so its adjoint is dct2
    grad_coeffs = dct2(partition_blocks(grad_y, n))
    if grad_filtered is not None:
        grad_coeffs = grad_coeffs + np.asarray(grad_filtered).reshape(grad_coeffs.shape)
    return filter_bank_gradient(cache.spectrum.coeffs, grad_coeffs)


def objective(weights, spectrum, q, target, config):
    """Evaluate the total loss at ``q``.

    Returns ``(breakdown, grad_q, adv_image, logits)``.
    """
    adv, cache = render(q, spectrum)
    logits, net_cache = clf.forward(weights, adv)
    cos_to_label = cosine_similarity(logits, one_hot(target, len(logits), logits.dtype))[0]
    if config.loss_kind == "cosine":
        adv_term = adversarial_loss(logits, target, config.kappa)
    else:
        adv_term = cross_entropy_adversarial_loss(logits, target)
    sim_term = similarity_loss(spectrum.coeffs.ravel(), cache.filtered.ravel())
    breakdown, (grad_logits, grad_coeffs) = total_loss(adv_term, sim_term, config.lam, cos_to_label)
    if np.any(grad_logits):
        grad_adv = clf.input_gradient(net_cache, grad_logits)
    else:
        grad_adv = np.zeros_like(adv)
    grad_q = pipeline_gradient(cache, grad_adv, grad_coeffs)
    return breakdown, grad_q, adv, logits


@dataclass
class AttackResult:
    q: np.ndarray
    adv_image: np.ndarray
    label: int
    target: int
    orig_prediction: int
    final_prediction: int
    success: bool
    first_success_iter: object  # int or None
    sim_loss: float
    psnr: float
    trace: list = field(default_factory=list)

    def trace_records(self):
        return [{"iter": i, **b._asdict()} for i, b in enumerate(self.trace)]


def _is_success(pred, label, orig_pred, mode):
    return pred != (label if mode == "ground-truth" else orig_pred)


def attack_image(weights, image, label, config):
    """Run the attack on one image; see :class:`AttackConfig` for the knobs."""
    dtype = np.dtype(config.dtype)
    if weights.dtype != dtype:
        weights = weights.astype(dtype)
    image = check_image(image)
    k = weights.spec.num_classes
    if not 0 <= label < k:
        raise ValueError(f"label {label} out of range for {k} classes")
    x = image.astype(dtype)
    spectrum = luma_spectrum(x, config.block_size)

    orig_pred = int(np.argmax(clf.forward(weights, x)[0]))
    target = int(label) if config.mode == "ground-truth" else orig_pred

    q = ones_filter_bank(config.block_size, dtype)
    state = AdamState.zeros_like(q)
    trace = []
    first_success = None
    for i in range(config.n_iters):
        breakdown, grad_q, _, logits = objective(weights, spectrum, q, target, config)
        trace.append(breakdown)
        if first_success is None and _is_success(int(np.argmax(logits)), label, orig_pred, config.mode):
            first_success = i
        q, state = adam_step(q, grad_q, state, config.lr, config.beta1, config.beta2, config.adam_eps)

    adv, cache = render(q, spectrum)
    final_pred = int(np.argmax(clf.forward(weights, adv)[0]))
    success = _is_success(final_pred, label, orig_pred, config.mode)
    if first_success is None and success:
        first_success = config.n_iters
    sim = similarity_loss(spectrum.coeffs.ravel(), cache.filtered.ravel())[0]
    return AttackResult(
        q=q,
        adv_image=adv,
        label=int(label),
        target=target,
        orig_prediction=orig_pred,
        final_prediction=final_pred,
        success=bool(success),
        first_success_iter=first_success,
        sim_loss=float(sim),
        psnr=psnr(x, adv),
        trace=trace,
    )


@dataclass
class AttackReport:
    results: list
    config: AttackConfig

    @property
    def clean_accuracy(self):
        return float(np.mean([r.orig_prediction == r.label for r in self.results]))

    @property
    def robust_accuracy(self):
        return float(np.mean([r.final_prediction == r.label for r in self.results]))

    @property
    def success_rate(self):
        return float(np.mean([r.success for r in self.results]))

    @property
    def mean_sim_loss(self):
        return float(np.mean([r.sim_loss for r in self.results]))

    @property
    def mean_sim_cosine(self):
        return 1.0 - self.mean_sim_loss

    @property
    def mean_psnr(self):
        finite = [r.psnr for r in self.results if math.isfinite(r.psnr)]
        return float(np.mean(finite)) if finite else math.inf


def attack_dataset(weights, dataset, config, progress=None):
    """Attack every image independently.

    ``config.batch`` sets how many images are in flight at once; it never
    changes the per-image results.
    """
    if len(dataset) == 0:
        raise ValueError("cannot attack an empty dataset")
    check_block_size(dataset.images.shape[1], dataset.images.shape[2], config.block_size)
    weights = weights.astype(np.dtype(config.dtype))

    def run(i):
        result = attack_image(weights, dataset.images[i], int(dataset.labels[i]), config)
        if progress is not None:
            progress(i, result)
        return result

    if config.batch == 1:
        results = [run(i) for i in range(len(dataset))]
    else:
        with ThreadPoolExecutor(max_workers=config.batch) as pool:
            results = list(pool.map(run, range(len(dataset))))
    return AttackReport(results, config)


def _resolve_weights(estimator):
    if isinstance(estimator, clf.ClassifierWeights):
        return estimator
    check_is_fitted(estimator, "weights_")
    return estimator.weights_


class BlockDCTFilter(TransformerMixin, BaseEstimator):
    """Stateless transformer applying one filter bank to the luma block DCT."""

    def __init__(self, filter_bank=None, block_size=None):
        self.filter_bank = filter_bank
        self.block_size = block_size

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        X = check_images(X)
        if self.filter_bank is None:
            if self.block_size is None:
                raise ValueError("need a filter_bank or a block_size")
            q = ones_filter_bank(self.block_size, np.float64)
        else:
            q = np.asarray(self.filter_bank, dtype=np.float64)
        return np.stack([forward_pipeline(q, x.astype(np.float64))[0] for x in X])


class MufiaAttack(TransformerMixin, BaseEstimator):
    """Estimator front end for :func:`attack_dataset`.

    ``fit(X, y)`` searches one filter bank per image; ``transform`` applies
    the fitted banks to the same number of images.  In ``decision-flip``
    mode ``y`` may be omitted.
    """

    def __init__(self, estimator=None, kappa=0.99, lam=20.0, n_iters=100, lr=0.1, block_size=32,
                 beta1=BETA1, beta2=BETA2, adam_eps=EPS, mode="ground-truth", loss="cosine",
                 seed=0, batch=1, dtype="float32"):
        self.estimator = estimator
        self.kappa = kappa
        self.lam = lam
        self.n_iters = n_iters
        self.lr = lr
        self.block_size = block_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.mode = mode
        self.loss = loss
        self.seed = seed
        self.batch = batch
        self.dtype = dtype

    def _config(self):
        return AttackConfig(
            kappa=self.kappa, lam=self.lam, n_iters=self.n_iters, lr=self.lr,
            block_size=self.block_size, beta1=self.beta1, beta2=self.beta2,
            adam_eps=self.adam_eps, mode=self.mode, loss_kind=self.loss, seed=self.seed,
            batch=self.batch, dtype=self.dtype,
        )

    def fit(self, X, y=None):
        from .imageio import LabeledDataset

        if self.estimator is None:
            raise ValueError("MufiaAttack needs a fitted classifier as `estimator`")
        weights = _resolve_weights(self.estimator)
        config = self._config()
        X = check_images(X)
        k = weights.spec.num_classes
        if y is None:
            if config.mode == "ground-truth":
                raise ValueError("ground-truth mode needs labels y")
            y = clf.predict_logits(weights, X).argmax(axis=1)
        y = check_labels(y, len(X), k)
        self.report_ = attack_dataset(weights, LabeledDataset(X, y, k), config)
        self.filter_banks_ = np.stack([r.q for r in self.report_.results])
        return self

    def transform(self, X):
        check_is_fitted(self, "filter_banks_")
        X = check_images(X)
        if len(X) != len(self.filter_banks_):
            raise ValueError(f"fitted {len(self.filter_banks_)} filter banks but got {len(X)} images")
        return np.stack([forward_pipeline(q, x.astype(q.dtype))[0] for q, x in zip(self.filter_banks_, X)])

    def fit_transform(self, X, y=None):
        self.fit(X, y)
        return np.stack([r.adv_image for r in self.report_.results])
