"""Built-in oracle suite: ETF Gram checks, gradient checks, ranking oracle, loss and KL identities."""
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from structalign.diffmath import Tensor, grad_check, kl_divergence
from structalign.diffmath.tensor import softmax_values
from structalign.encoders import (
    ProjectionHead,
    frozen_attention,
    init_projection_head,
    init_text_encoder,
    init_video_encoder,
    lora_attention,
    project_to_prototype_space,
    router_gates,
)
from structalign.etf_geometry import build_etf, verify_etf
from structalign.losses import PooledPairs, attention_pool, crp_loss, etf_alignment_loss, scl_loss
from structalign.metrics import rank_from_similarity

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-4
GRAD_SEEDS = 20
ETF_CASES = ((2, 2), (4, 8), (10, 16), (16, 64))
ETF_SEEDS = 5
RANKING_INSTANCES = 200
MAX_GALLERY = 64
FAULTS = ("scale-prototype",)


@dataclass(frozen=True)
class CheckResult:
    group: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.group}.{self.name}: {self.detail}"


CheckFn = Callable[[str | None], tuple[bool, str]]


def _check_etf_gram(fault: str | None) -> tuple[bool, str]:
    worst = 0.0
    for c, d in ETF_CASES:
        for seed in range(ETF_SEEDS):
            prototypes = build_etf(c, d, seed)
            if fault == "scale-prototype":
                prototypes = prototypes.scaled_column(0, 2.0)
            report = verify_etf(prototypes, tol=1e-9)
            worst = max(worst, report.diag_deviation, report.offdiag_deviation)
            if not report.passed:
                return False, f"C={c} d={d} seed={seed}: diag {report.diag_deviation:.3e}, offdiag {report.offdiag_deviation:.3e}"
    return True, f"{len(ETF_CASES) * ETF_SEEDS} frames, max deviation {worst:.3e}"


def _grad_worst(make_case: Callable[[np.random.Generator], tuple[Callable, dict]]) -> float:
    worst = 0.0
    for seed in range(GRAD_SEEDS):
        f, point = make_case(np.random.default_rng(seed))
        worst = max(worst, grad_check(f, point))
    return worst


def _grad_result(worst: float) -> tuple[bool, str]:
    return worst < GRAD_TOLERANCE, f"max relative error {worst:.3e} over {GRAD_SEEDS} seeds"


def _scl_case(rng: np.random.Generator):
    return (lambda p: scl_loss(p["s"], tau=0.07)), {"s": rng.uniform(-1.0, 1.0, (4, 4))}


def _crp_case(rng: np.random.Generator):
    s_prev = rng.uniform(-1.0, 1.0, (4, 4))
    return (lambda p: crp_loss(p["s"], s_prev, tau2=1.0)), {"s": rng.uniform(-1.0, 1.0, (4, 4))}


def etf_gradient_case(rng: np.random.Generator, batch: int = 4, tokens: int = 3, width: int = 6, dim: int = 16):
    """ETF loss through both projection heads and prototype-guided pooling."""
    prototypes = build_etf(4, dim, 0)
    categories = rng.integers(0, 4, batch)
    targets = prototypes.matrix[:, categories].T
    words = rng.standard_normal((batch, tokens, width))
    frames = rng.standard_normal((batch, tokens + 1, width))
    heads = {m: init_projection_head(rng, width, dim, hidden=4) for m in ("text", "video")}
    for head in heads.values():
        head.w_out.value = rng.normal(0.0, 0.5, head.w_out.shape)
        head.b_hidden.value = rng.normal(0.0, 0.5, head.b_hidden.shape)
    point = {f"{m}.{k}": v.value for m, head in heads.items() for k, v in head.trainable().items()}

    def f(p):
        def head_of(m):
            return ProjectionHead(**{k: p[f"{m}.{k}"] for k in heads[m].trainable()})

        pooled = PooledPairs(
            w_bar=attention_pool(project_to_prototype_space(words, head_of("text")), targets),
            f_bar=attention_pool(project_to_prototype_space(frames, head_of("video")), targets),
            categories=categories,
        )
        return etf_alignment_loss(pooled, prototypes)

    return f, point


def _check_grad_scl(fault: str | None) -> tuple[bool, str]:
    return _grad_result(_grad_worst(_scl_case))


def _check_grad_crp(fault: str | None) -> tuple[bool, str]:
    return _grad_result(_grad_worst(_crp_case))


def _check_grad_etf(fault: str | None) -> tuple[bool, str]:
    return _grad_result(_grad_worst(etf_gradient_case))


def brute_force_ranks(similarity: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Full sort by (-similarity, gallery index) per query."""
    ranks = []
    for i, row in enumerate(similarity):
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        ranks.append(order.index(int(truth[i])) + 1)
    return np.array(ranks)


def _check_ranking(fault: str | None) -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    for instance in range(RANKING_INSTANCES):
        gallery = int(rng.integers(1, MAX_GALLERY + 1))
        queries = int(rng.integers(1, 9))
        similarity = rng.uniform(-1.0, 1.0, (queries, gallery))
        if instance % 2:
            # coarse values force ties
            similarity = np.round(similarity, 1)
        truth = rng.integers(0, gallery, queries)
        if not np.array_equal(rank_from_similarity(similarity, truth), brute_force_ranks(similarity, truth)):
            return False, f"instance {instance} disagrees with the brute-force sort"
    return True, f"{RANKING_INSTANCES} instances match the brute-force sort"


def _check_kl(fault: str | None) -> tuple[bool, str]:
    if abs(kl_divergence([1.0, 0.0], [0.5, 0.5]) - np.log(2.0)) > 1e-12:
        return False, "KL((1,0) || (0.5,0.5)) != ln 2"
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(100):
        s = rng.uniform(-1.0, 1.0, (4, 4))
        worst = max(worst, abs(crp_loss(s, s, tau2=float(rng.uniform(0.1, 2.0))).item()))
    if worst > 1e-12:
        return False, f"crp_loss(S, S) reached {worst:.3e}"
    s_prev, s_curr = rng.uniform(-1.0, 1.0, (2, 4, 4))
    p, q = softmax_values(s_prev, axis=1), softmax_values(s_curr, axis=1)
    row_kl = np.mean([kl_divergence(p[i], q[i]) for i in range(4)])
    if abs(crp_loss(s_curr, s_prev, tau2=1.0, symmetric=False).item() - row_kl) > 1e-10:
        return False, "row-wise CRP differs from the mean KL of softened rows"
    return True, "KL identities hold; crp_loss(S, S) = 0 on 100 matrices"


def _check_losses(fault: str | None) -> tuple[bool, str]:
    for b in (2, 4, 8):
        if abs(scl_loss(np.full((b, b), 0.3), tau=0.07).item() - np.log(b)) > 1e-9:
            return False, f"scl_loss on a uniform {b}x{b} matrix is not log {b}"
    prototypes = build_etf(4, 16, 0)
    categories = np.array([0, 1, 2, 3])
    at_prototypes = Tensor(prototypes.matrix[:, categories].T)
    loss = etf_alignment_loss(PooledPairs(at_prototypes, at_prototypes, categories), prototypes).item()
    if abs(loss) > 1e-9:
        return False, f"etf_alignment_loss at the prototypes is {loss:.3e}"
    return True, "uniform SCL = log B; ETF loss vanishes at the prototypes"


def _check_moe(fault: str | None) -> tuple[bool, str]:
    rng = np.random.default_rng(3)
    layer = init_text_encoder(rng, width=32, layers=1, experts=4, k_e=2).layers[0]
    x = rng.standard_normal((1000, 32))
    gates = router_gates(x @ layer.router.value, layer.k_e).value
    nonzero = np.count_nonzero(gates, axis=1)
    if not np.all(nonzero == layer.k_e):
        return False, "a gate vector does not have exactly k_e nonzero entries"
    if np.max(np.abs(gates.sum(axis=1) - 1.0)) > 1e-9:
        return False, "gate weights do not sum to 1"
    return True, "1000 inputs: k_e nonzero gates summing to 1"


def _check_lora(fault: str | None) -> tuple[bool, str]:
    rng = np.random.default_rng(5)
    layer = init_video_encoder(rng, width=32, layers=1, rank=4).layers[0]
    layer.a_q.value = np.zeros_like(layer.a_q.value)
    layer.a_v.value = np.zeros_like(layer.a_v.value)
    x = rng.standard_normal((6, 4, 32))
    if not np.array_equal(lora_attention(x, layer).value, frozen_attention(x, layer)):
        return False, "zeroed LoRA factors change the attention output"
    return True, "zeroed LoRA factors reproduce the frozen path bit-exactly"


CHECKS: dict[str, dict[str, CheckFn]] = {
    "etf": {"gram": _check_etf_gram},
    "grad": {"scl": _check_grad_scl, "etf": _check_grad_etf, "crp": _check_grad_crp},
    "ranking": {"oracle": _check_ranking},
    "kl": {"identities": _check_kl},
    "loss": {"identities": _check_losses},
    "moe": {"gating": _check_moe},
    "lora": {"zero_adapter": _check_lora},
}


def run_checks(group_filter: str | None = None, fault: str | None = None) -> list[CheckResult]:
    """Run every check whose group (or group.name) starts with ``group_filter``."""
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"Unknown fault {fault!r}; expected one of {', '.join(FAULTS)}")
    results = []
    for group, checks in CHECKS.items():
        for name, check in checks.items():
            if group_filter and not f"{group}.{name}".startswith(group_filter):
                continue
            try:
                passed, detail = check(fault)
            except Exception as e:
                passed, detail = False, f"raised {type(e).__name__}: {e}"
            logger.debug(f"check {group}.{name}: {'pass' if passed else 'fail'}")
            results.append(CheckResult(group=group, name=name, passed=passed, detail=detail))
    return results
