from dataclasses import dataclass, field
import numpy as np

from .tensor import Tensor, recording

import logging

log = logging.getLogger(__name__)


@dataclass
class ParameterCheck:
    """
    Result of the finite-difference check of one parameter
    """

    name: str
    max_rel_error: float
    checked_entries: int
    passed: bool
    diagnostic: str = ""


@dataclass
class GradientCheckReport:
    """
    Per-parameter results of :func:`finite_diff_check`
    """

    tolerance: float
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        if not self.checks:
            return 0.0
        return max(c.max_rel_error for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_records(self) -> list:
        return [
            {
                "name": c.name,
                "max_rel_error": c.max_rel_error,
                "checked_entries": c.checked_entries,
                "passed": c.passed,
                "diagnostic": c.diagnostic,
            }
            for c in self.checks
        ]


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """
    |analytic - numeric| / max(|analytic|, |numeric|, floor)

    :param float analytic: gradient from the reverse pass
    :param float numeric: central finite difference
    :param float floor: lower bound of the denominator, keeps vanishing
        gradients from producing spurious errors
    :return: relative error
    :rtype: float
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _evaluate(f) -> float:
    out = f()
    if isinstance(out, Tensor):
        return out.item()
    return float(out)


def finite_diff_check(
    f,
    params: list,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int = None,
    rng: np.random.Generator = None,
    analytic_grads: dict = None,
    floor: float = 1e-6,
) -> GradientCheckReport:
    """
    Compares reverse-mode gradients with central finite differences

    f is called without arguments and must read the current values of params.
    The analytic gradients come from one reverse pass through f (unless given
    in analytic_grads). Each checked entry v is perturbed by
    +/- h * max(1, |v|); the entry is restored afterwards.

    :param f: deterministic callable returning a scalar (Tensor or float)
    :param list params: tensors to check (Parameters or requires_grad Tensors)
    :param float h: base step
    :param float tol: relative tolerance
    :param int max_entries: if set, at most this many entries per parameter are
        checked (sampled with rng)
    :param np.random.Generator rng: generator used for entry sampling
    :param dict analytic_grads: optional {param index: gradient array} that
        replaces the reverse pass
    :param float floor: denominator floor of the relative error
    :return: report with the maximum relative error per parameter
    :rtype: GradientCheckReport
    """
    report = GradientCheckReport(tolerance=tol)
    names = [getattr(p, "name", f"param_{i}") for i, p in enumerate(params)]

    if analytic_grads is None:
        for p in params:
            p.zero_grad()
        with recording() as tape:
            loss = f()
        if not np.all(np.isfinite(loss.values)):
            for name in names:
                report.checks.append(
                    ParameterCheck(
                        name, float("inf"), 0, False, "non-finite function value"
                    )
                )
            log.warning("Gradient check aborted: non-finite function value")
            return report
        tape.backward(loss)
        analytic = [
            p.grad.copy() if p.grad is not None else np.zeros_like(p.values)
            for p in params
        ]
    else:
        analytic = [
            np.asarray(analytic_grads[i], dtype=np.float64) for i in range(len(params))
        ]

    if rng is None:
        rng = np.random.default_rng(0)

    for p, name, grad in zip(params, names, analytic):
        flat_size = p.values.size
        entries = np.arange(flat_size)
        if max_entries is not None and flat_size > max_entries:
            entries = np.sort(rng.choice(flat_size, size=max_entries, replace=False))

        worst = 0.0
        diagnostic = ""
        for flat_idx in entries:
            idx = np.unravel_index(flat_idx, p.values.shape)
            original = p.values[idx]
            step = h * max(1.0, abs(original))
            p.values[idx] = original + step
            f_plus = _evaluate(f)
            p.values[idx] = original - step
            f_minus = _evaluate(f)
            p.values[idx] = original

            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                worst = float("inf")
                position = tuple(int(i) for i in idx)
                diagnostic = f"non-finite function value at entry {position}"
                break
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = relative_error(float(grad[idx]), numeric, floor)
            if err > worst:
                worst = err
                position = tuple(int(i) for i in idx)
                diagnostic = (
                    f"entry {position}: analytic {float(grad[idx]):.6e}, "
                    f"numeric {numeric:.6e}"
                )

        passed = bool(worst <= tol)
        report.checks.append(
            ParameterCheck(name, float(worst), int(len(entries)), passed, diagnostic)
        )
        if not passed:
            log.warning(f"Gradient check failed for {name}: {diagnostic}")

    return report
