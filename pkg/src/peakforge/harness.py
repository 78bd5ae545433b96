"""Run configuration, method dispatch, method recommendation and kappa sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from .additive import backfit, select_L_by_aic
from .l0deconv import (
    DEFAULT_KAPPA,
    FACT_WAVE,
    PeakShape,
    WaveParams,
    blind_deconv,
    build_conv_matrix,
    l0_fit_pulses,
    preprocess_signal,
    pulse_onsets,
)
from .piecewise import (
    classify_phases,
    fit_piecewise,
    piecewise_fitted,
    segment_by_threshold,
    turning_point,
)
from .spline_basis import build_basis, design_matrix
from .synthetic import SignalRecord
from .unimodal import fit_unimodal, fit_with_sigma_iteration, make_penalty
from .varying import estimate_noise_from_window, varying_l0_fit

logger = logging.getLogger(__name__)

METHODS = ("unireg", "punireg", "l0deco", "blind_pointwise", "blind_parametric",
           "blind_unimodal", "adduni", "varying_l0deco")
DECONV_METHODS = ("l0deco", "blind_pointwise", "blind_parametric", "blind_unimodal",
                  "varying_l0deco")

# per-method defaults that differ from the dataclass defaults
_DEFAULTS = {
    "unireg": {"q": 25, "penalty": "d2", "sigma2_policy": "iterate:2:0.01"},
    "punireg": {"q": 25, "penalty": "d2", "sigma2_policy": "iterate:2:0.01"},
    "adduni": {"q": 20, "penalty": "d2", "sigma2_policy": "diff"},
    "varying_l0deco": {"q": 200, "penalty": "ridge", "kappa": 0.002, "sigma2_policy": "diff"},
}

_SMOOTH = ("q", "degree", "penalty", "lambda_policy", "sigma2_policy")
_PULSE = ("kappa", "n_g", "wave")
_RELEVANT = {
    "unireg": _SMOOTH,
    "punireg": _SMOOTH + ("threshold",),
    "l0deco": _PULSE,
    "blind_pointwise": _PULSE + ("max_outer",),
    "blind_parametric": _PULSE + ("max_outer",),
    "blind_unimodal": _PULSE + ("max_outer",),
    "adduni": _SMOOTH + ("components", "max_outer"),
    "varying_l0deco": ("q", "degree", "kappa", "lambda_policy", "sigma2_policy", "max_outer"),
}


class ConfigError(ValueError):
    """Invalid run configuration."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def parse_lambda_policy(text: str) -> float | None:
    """``reml`` -> None (select by REML), ``fixed:<v>`` -> v."""
    text = text.strip()
    if text == "reml":
        return None
    kind, _, val = text.partition(":")
    if kind != "fixed" or not val:
        raise ConfigError(f"lambda policy must be 'reml' or 'fixed:<value>', got {text!r}")
    try:
        lam = float(val)
    except ValueError:
        raise ConfigError(f"bad lambda value {val!r}") from None
    if not (lam >= 0 and np.isfinite(lam)):
        raise ConfigError("fixed lambda must be finite and nonnegative")
    return lam


def parse_sigma2_policy(text: str) -> tuple:
    """``fixed:<v>``, ``iterate:<init>:<abstol>``, ``window:<lo>:<hi>`` or ``diff``."""
    parts = text.strip().split(":")
    kind = parts[0]
    try:
        if kind == "fixed" and len(parts) == 2:
            v = float(parts[1])
            if not v > 0:
                raise ConfigError("fixed sigma2 must be positive")
            return ("fixed", v)
        if kind == "iterate" and len(parts) == 3:
            init, tol = float(parts[1]), float(parts[2])
            if not (init > 0 and tol > 0):
                raise ConfigError("iterate needs positive start value and tolerance")
            return ("iterate", init, tol)
        if kind == "window" and len(parts) == 3:
            return ("window", int(parts[1]), int(parts[2]))
        if kind == "diff" and len(parts) == 1:
            return ("diff",)
    except ValueError:
        raise ConfigError(f"bad number in sigma2 policy {text!r}") from None
    raise ConfigError("sigma2 policy must be fixed:<v>, iterate:<init>:<abstol>, "
                      f"window:<lo>:<hi> or diff, got {text!r}")


def parse_components(text: str) -> tuple[str, int]:
    """``<L>`` fixes the number of components, ``aic:<Lmax>`` selects it."""
    text = str(text).strip()
    kind, sep, val = text.partition(":")
    try:
        if sep and kind == "aic":
            n = int(val)
            mode = "aic"
        elif not sep:
            n = int(kind)
            mode = "fixed"
        else:
            raise ValueError
    except ValueError:
        raise ConfigError(f"components must be '<L>' or 'aic:<Lmax>', got {text!r}") from None
    if n < 1:
        raise ConfigError("number of components must be at least 1")
    return mode, n


def parse_wave(text: str) -> WaveParams:
    try:
        vals = [float(v) for v in text.split(":")]
        if len(vals) != 3:
            raise ValueError
        return WaveParams(*vals)
    except ValueError:
        raise ConfigError(f"wave must be U0:xi1:xi2 with positive values, got {text!r}") from None


def parse_grid(text: str) -> np.ndarray:
    try:
        grid = np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ConfigError(f"bad kappa grid {text!r}") from None
    if grid.size == 0:
        raise ConfigError("kappa grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ConfigError("kappa grid must be positive and strictly ascending")
    return grid


@dataclass
class RunConfig:
    method: str = ""
    q: int | None = None
    degree: int = 3
    kappa: float | None = None
    lambda_policy: str = "reml"
    threshold: float | None = None
    sigma2_policy: str | None = None
    components: str = "aic:3"
    seed: int = 0
    penalty: str | None = None
    n_g: int = 151
    wave: str = ":".join(str(v) for v in FACT_WAVE)
    max_outer: int | None = None

    _INT = ("q", "degree", "seed", "n_g", "max_outer")
    _FLOAT = ("kappa", "threshold")

    @classmethod
    def from_mapping(cls, items: dict) -> RunConfig:
        """Build from string values (config file or CLI); unknown keys are errors."""
        names = {f.name for f in fields(cls)}
        kwargs = {}
        for key, val in items.items():
            key = key.replace("-", "_")
            if key not in names:
                raise ConfigError(f"unknown configuration key {key!r}")
            if val is None or val == "":
                continue
            try:
                if key in cls._INT:
                    val = int(val)
                elif key in cls._FLOAT:
                    val = float(val)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {val!r}") from None
            kwargs[key] = val
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def setting(self, name):
        """Explicit value, else the method default, else the dataclass default."""
        val = getattr(self, name)
        if val is None:
            val = _DEFAULTS.get(self.method, {}).get(name)
        if val is None and name == "kappa":
            val = DEFAULT_KAPPA
        if val is None and name == "q":
            val = 25
        return val

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}; got {self.method!r}")
        q = self.setting("q")
        if q < 0:
            raise ConfigError("q must be nonnegative")
        if self.degree < 1:
            raise ConfigError("degree must be at least 1")
        if not self.setting("kappa") > 0:
            raise ConfigError("kappa must be positive")
        if self.n_g < 1:
            raise ConfigError("n_g must be at least 1")
        if self.max_outer is not None and self.max_outer < 1:
            raise ConfigError("max_outer must be at least 1")
        parse_lambda_policy(self.lambda_policy)
        if self.setting("sigma2_policy") is not None:
            pol = parse_sigma2_policy(self.setting("sigma2_policy"))
            if pol[0] == "iterate" and self.method in ("adduni", "varying_l0deco"):
                raise ConfigError(f"{self.method} needs a fixed variance, not 'iterate'")
        try:
            make_penalty(self.setting("penalty") or "d2", 3)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        parse_components(self.components)
        parse_wave(self.wave)
        if self.method == "punireg" and self.threshold is None:
            raise ConfigError("punireg needs --threshold")

    def as_dict(self) -> dict:
        """Settings that apply to the chosen method."""
        out = {"method": self.method}
        for name in _RELEVANT[self.method] + ("seed",):
            val = self.setting(name)
            if val is not None:
                out[name] = val
        return out


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    method: str
    x: np.ndarray
    y: np.ndarray
    fitted: np.ndarray
    components: dict = field(default_factory=dict)  # name -> n-vector
    pulses: list = field(default_factory=list)  # (position, height) bars
    markers: list = field(default_factory=list)  # vertical reference lines
    extra_plots: dict = field(default_factory=dict)  # file stem -> {column: values}
    summary: dict = field(default_factory=dict)
    converged: bool = True
    flags: list = field(default_factory=list)

    @property
    def rss(self) -> float:
        ok = np.isfinite(self.fitted)
        r = self.y[ok] - self.fitted[ok]
        return float(r @ r)


def difference_noise_variance(y) -> float:
    """Robust noise variance from the MAD of first differences."""
    dy = np.diff(np.asarray(y, dtype=float))
    if dy.size < 2:
        raise ConfigError("too few observations to estimate the noise level")
    mad = np.median(np.abs(dy - np.median(dy)))
    var = (1.4826 * mad) ** 2 / 2.0
    if not var > 0:
        raise ConfigError("noise estimate is zero; give sigma2 explicitly (fixed:<v>)")
    return float(var)


def _fixed_sigma2(policy, y) -> float:
    kind = policy[0]
    if kind == "fixed":
        return policy[1]
    if kind == "window":
        return estimate_noise_from_window(y, policy[1], policy[2])
    if kind == "diff":
        return difference_noise_variance(y)
    raise ConfigError(f"sigma2 policy {kind!r} is not a fixed variance")


def _index_to_x(x, idx):
    """Map (possibly out-of-range) sample indices to predictor values."""
    idx = np.asarray(idx, dtype=float)
    step = (x[-1] - x[0]) / (x.size - 1)
    inside = (idx >= 0) & (idx <= x.size - 1)
    out = x[0] + idx * step
    if np.any(inside):
        out[inside] = np.interp(idx[inside], np.arange(x.size), x)
    return out


def _run_unireg(cfg, x, y):
    q, k = cfg.setting("q"), cfg.degree
    basis = build_basis(x[0], x[-1], q, k)
    B = design_matrix(basis, x)
    pen = make_penalty(cfg.setting("penalty"), basis.dim)
    lam = parse_lambda_policy(cfg.lambda_policy)
    pol = parse_sigma2_policy(cfg.setting("sigma2_policy"))
    if pol[0] == "iterate":
        fit = fit_with_sigma_iteration(B, y, pen, pol[1], pol[2], lam=lam, basis=basis, strict=False)
    else:
        fit = fit_unimodal(B, y, pen, _fixed_sigma2(pol, y), lam=lam, basis=basis)
    tp = turning_point(fit)
    grid = np.linspace(x[0], x[-1], 4001)
    summary = {"peak_count": 1, "mode_index": fit.mode, "mode_x": grid[np.argmax(fit.spline(grid))],
               "turning_point": tp if tp is not None else "none", "lambda": fit.lam,
               "sigma2": fit.sigma2, "edf": fit.edf, "iterations": fit.iterations}
    flags = [] if fit.converged else ["variance iteration hit its cap"]
    return RunResult("unireg", x, y, fit.fitted, summary=summary, converged=fit.converged,
                     flags=flags, markers=[tp] if tp is not None else [])


def _run_punireg(cfg, x, y):
    q, k = cfg.setting("q"), cfg.degree
    d = q + k + 1
    segs = segment_by_threshold(x, y, cfg.threshold, min_size=d)
    pol = parse_sigma2_policy(cfg.setting("sigma2_policy"))
    lam = parse_lambda_policy(cfg.lambda_policy)
    if pol[0] == "iterate":
        segs = fit_piecewise(x, y, segs, q=q, k=k, penalty=cfg.setting("penalty"), sigma2=None,
                             sigma2_init=pol[1], abstol=pol[2], lam=lam)
    else:
        segs = fit_piecewise(x, y, segs, q=q, k=k, penalty=cfg.setting("penalty"),
                             sigma2=_fixed_sigma2(pol, y), lam=lam)
    summary = {"segment_count": len(segs)}
    comps = {}
    markers = []
    converged = True
    flags = []
    for i, seg in enumerate(segs, start=1):
        pre = f"seg{i}_"
        summary[pre + "x_lo"] = seg.x_lo
        summary[pre + "x_hi"] = seg.x_hi
        summary[pre + "n"] = len(seg)
        if seg.fit is None:
            summary[pre + "error"] = seg.error
            flags.append(f"segment {i}: {seg.error}")
            continue
        labels = classify_phases(x, seg)
        tp = labels.turning_point
        summary[pre + "turning_point"] = tp if tp is not None else "none"
        summary[pre + "descent_n"] = len(labels.descent)
        summary[pre + "ascent_n"] = len(labels.ascent)
        summary[pre + "mode_index"] = seg.fit.mode
        summary[pre + "lambda"] = seg.fit.lam
        summary[pre + "sigma2"] = seg.fit.sigma2
        summary[pre + "rss"] = seg.fit.rss
        if not seg.fit.converged:
            converged = False
            flags.append(f"segment {i}: variance iteration hit its cap")
        if tp is not None:
            markers.append(tp)
        col = np.full(x.size, np.nan)
        col[seg.start:seg.stop] = seg.fit.fitted
        comps[f"segment_{i}"] = col
    summary["peak_count"] = sum(1 for s in segs if s.fit is not None)
    return RunResult("punireg", x, y, piecewise_fitted(x.size, segs), comps, markers=markers,
                     summary=summary, converged=converged, flags=flags)


def _pulse_result(method, x, y, shape, sol, rec, cfg, extra=None, converged=True, flags=()):
    g = shape.normalized()
    n_g = g.size
    idx = sol.active
    onsets = pulse_onsets(n_g, idx)
    peak_idx = onsets + int(np.argmax(g))
    heights = sol.pulses[idx] * rec.scale
    comps = {}
    for i, (c, h) in enumerate(zip(idx, heights), start=1):
        col = np.zeros(x.size)
        lo, hi = max(onsets[i - 1], 0), min(onsets[i - 1] + n_g, x.size)
        if lo < hi:
            col[lo:hi] = h * g[lo - onsets[i - 1]:hi - onsets[i - 1]]
        comps[f"peak_{i}"] = col
    peak_x = _index_to_x(x, peak_idx) if idx.size else np.zeros(0)
    summary = {"peak_count": int(idx.size), "onset_index": onsets.tolist(),
               "onset_x": _index_to_x(x, onsets).tolist() if idx.size else [],
               "peak_x": peak_x.tolist(), "heights": heights.tolist(), "kappa": sol.kappa,
               "n_g": n_g, "offset": rec.offset}
    summary.update(extra or {})
    return RunResult(method, x, y, rec.back(sol.fitted), comps,
                     pulses=list(zip(peak_x.tolist(), heights.tolist())),
                     summary=summary, converged=converged, flags=list(flags))


def _run_l0deco(cfg, x, y):
    wave = parse_wave(cfg.wave)
    if cfg.n_g > x.size:
        raise ConfigError(f"n_g={cfg.n_g} exceeds the {x.size} observations")
    shape = PeakShape.parametric(wave, cfg.n_g)
    ys, rec = preprocess_signal(y)
    sol = l0_fit_pulses(build_conv_matrix(shape.normalized(), x.size), ys, cfg.setting("kappa"))
    flags = [] if sol.converged else ["pulse iteration hit its cap"]
    return _pulse_result("l0deco", x, y, shape, sol, rec, cfg,
                         {"iterations": sol.iterations}, sol.converged, flags)


def _run_blind(cfg, x, y):
    variant = cfg.method.split("_", 1)[1]
    if cfg.n_g > x.size:
        raise ConfigError(f"n_g={cfg.n_g} exceeds the {x.size} observations")
    start = PeakShape.parametric(parse_wave(cfg.wave), cfg.n_g)
    if variant != "parametric":
        start = PeakShape(variant, start.values)
    res = blind_deconv(y, start, kappa=cfg.setting("kappa"), variant=variant,
                       max_outer=cfg.max_outer or 50)
    extra = {"outer_iterations": res.outer_iterations}
    w = res.canonical_wave()
    if w is not None:
        extra.update({"U0": w.U0, "xi1": w.xi1, "xi2": w.xi2,
                      "relative_heights": res.relative_heights().tolist()})
    if res.shape.mode is not None:
        extra["shape_mode_index"] = res.shape.mode
    out = _pulse_result(cfg.method, x, y, res.shape, res.solution, res.scale, cfg, extra,
                        res.converged, res.flags)
    out.extra_plots["shape"] = {"t": np.arange(res.n_g, dtype=float), "shape": res.shape.normalized()}
    return out


def _run_adduni(cfg, x, y):
    pol = parse_sigma2_policy(cfg.setting("sigma2_policy"))
    sigma2 = _fixed_sigma2(pol, y)
    mode, L = parse_components(cfg.components)
    kw = dict(q=cfg.setting("q"), k=cfg.degree, penalty=cfg.setting("penalty"), sigma2=sigma2,
              lam=parse_lambda_policy(cfg.lambda_policy))
    if cfg.max_outer:
        kw["max_cycles"] = cfg.max_outer
    summary = {}
    if mode == "aic":
        fit, table = select_L_by_aic(x, y, L, **kw)
        for ell, val in table.items():
            summary[f"aic_L{ell}"] = val
    else:
        fit = backfit(x, y, L, **kw)
    grid = np.linspace(x[0], x[-1], 4001)
    locs = [float(grid[np.argmax(s(grid))]) for s in fit.components]
    summary.update({"peak_count": fit.L, "alpha": fit.alpha, "aic": fit.aic, "sigma2": sigma2,
                    "modes": fit.modes, "peak_x": locs, "lambdas": fit.lams, "edfs": fit.edfs,
                    "cycles": fit.cycles, "frozen": fit.frozen})
    comps = {f"component_{i}": fit.component_values[:, i - 1] for i in range(1, fit.L + 1)}
    flags = [] if fit.converged else [f"backfitting stopped after {fit.cycles} cycles"]
    return RunResult("adduni", x, y, fit.fitted, comps, summary=summary,
                     converged=fit.converged, flags=flags)


def _run_varying(cfg, x, y):
    pol = parse_sigma2_policy(cfg.setting("sigma2_policy"))
    sigma2 = _fixed_sigma2(pol, y)
    res = varying_l0_fit(x, y, q=cfg.setting("q"), k=cfg.degree, kappa=cfg.setting("kappa"),
                         sigma2=sigma2, lam=parse_lambda_policy(cfg.lambda_policy),
                         max_outer=cfg.max_outer or 200, penalty=None)
    idx = res.active_set
    heights = res.heights()
    locs = res.peak_locations()
    comps = {f"peak_{i}": res.peaks()[:, i - 1] * res.scale for i in range(1, idx.size + 1)}
    summary = {"peak_count": int(idx.size), "active_columns": (idx + 1).tolist(),
               "peak_x": locs.tolist(), "heights": heights.tolist(),
               "lambdas": res.lams[idx].tolist(), "kappa": cfg.setting("kappa"), "sigma2": sigma2,
               "offset": res.offset, "scale": res.scale, "iterations": res.iterations}
    return RunResult("varying_l0deco", x, y, res.fitted_response(), comps,
                     pulses=list(zip(locs.tolist(), heights.tolist())), summary=summary,
                     converged=res.converged, flags=res.flags)


_RUNNERS = {
    "unireg": _run_unireg,
    "punireg": _run_punireg,
    "l0deco": _run_l0deco,
    "blind_pointwise": _run_blind,
    "blind_parametric": _run_blind,
    "blind_unimodal": _run_blind,
    "adduni": _run_adduni,
    "varying_l0deco": _run_varying,
}


def run(config: RunConfig, data: SignalRecord) -> RunResult:
    config.validate()
    x, y = data.x, data.y
    d = config.setting("q") + config.degree + 1
    if config.method in ("unireg", "adduni", "varying_l0deco") and x.size < d:
        raise ConfigError(f"{x.size} observations are too few for a basis of dimension {d}")
    res = _RUNNERS[config.method](config, x, y)
    res.summary = {"method": config.method, "n": int(x.size), **res.summary,
                   "rss": res.rss, "converged": res.converged,
                   "flags": "; ".join(res.flags) if res.flags else "none"}
    for key, val in config.as_dict().items():
        res.summary.setdefault(f"config_{key}", val)
    return res


def kappa_sweep(config: RunConfig, data: SignalRecord, kappa_grid) -> list[dict]:
    """One deconvolution per kappa; failures become rows with an error message."""
    if config.method not in DECONV_METHODS:
        raise ConfigError(f"kappa sweep needs a deconvolution method, not {config.method!r}")
    grid = np.asarray(kappa_grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("kappa grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ConfigError("kappa grid must be positive and strictly ascending")
    rows = []
    for kappa in grid:
        cfg = RunConfig(**{f.name: getattr(config, f.name) for f in fields(RunConfig)})
        cfg.kappa = float(kappa)
        try:
            res = run(cfg, data)
            rows.append({"kappa": float(kappa), "peak_count": res.summary["peak_count"],
                         "rss": res.rss, "converged": res.converged, "error": ""})
        except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            logger.warning("kappa=%g failed: %s", kappa, exc)
            rows.append({"kappa": float(kappa), "peak_count": -1, "rss": float("nan"),
                         "converged": False, "error": str(exc)})
    return rows


# ---------------------------------------------------------------------------
# method recommendation
# ---------------------------------------------------------------------------

@dataclass
class Recommendation:
    method: str
    alternatives: list
    rationale: str


def recommend_method(peaks_identical, shape_known: bool, overlap: bool) -> Recommendation:
    """Pick a method from whether peaks share a shape, whether it is known, and overlap.

    ``peaks_identical`` may be ``None`` for unknown; this is treated like
    diverse shapes, which the diverse-shape methods also cover.
    """
    if peaks_identical and shape_known:
        return Recommendation(
            "l0deco", [],
            "All peaks share one known shape, so the convolution model with that shape "
            "estimates the number, locations and heights of peaks in one step, with or "
            "without overlap.")
    if peaks_identical:
        return Recommendation(
            "blind_unimodal", ["blind_pointwise", "blind_parametric"],
            "All peaks share one unknown shape: estimate it jointly with the pulses.  The "
            "unimodal spline shape gives a smooth estimate without assuming a formula; use "
            "the parametric variant when a shape formula is known, pointwise otherwise.")
    unknown = "" if peaks_identical is not None else (
        "Whether peaks share a shape is unknown, so the diverse-shape methods are used. ")
    if not overlap:
        return Recommendation(
            "punireg", ["unireg"],
            unknown + "Peaks differ in shape but do not overlap, so the series splits into "
            "pieces at a response threshold and each piece gets its own unimodal fit "
            "(unireg if there is only one peak).")
    return Recommendation(
        "varying_l0deco", ["adduni"],
        unknown + "Peaks differ in shape and overlap, so they add up where they meet.  The "
        "varying-shape deconvolution estimates how many peaks there are; the additive model "
        "costs more and is best kept for cases where the number of peaks is known.")
