"""One-dimensional Markov models: drift, volatility and Levy jump measure.

Models are written in the generator form

    G f(x) = 1/2 vol(x)^2 f''(x) + drift(x) f'(x)
             + int (f(x+z) - f(x) - z 1{|z|<=1} f'(x)) nu(x, dz)

so ``drift`` always includes the small-jump compensation at ``|z| <= 1``.
Log-price presets (BS, Kou, VG) carry the risk-neutral drift that makes
``exp(X_t - (r - d) t)`` a martingale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy import integrate, special

from .errors import ConfigError, NumericalError

__all__ = [
    "JumpMeasure",
    "DensityJumps",
    "KouJumps",
    "VGJumps",
    "ModelSpec",
    "RegimeModel",
    "build_preset",
    "jump_mass",
    "PRESETS",
]

PRESETS = ("BM", "BS", "KOU", "VG", "RS_BS", "CIR")


# --------------------------------------------------------------------------- #
# Jump measures
# --------------------------------------------------------------------------- #


class JumpMeasure:
    """Levy measure ``nu(x, dz)`` with integrals over half-open intervals ``(a, b]``.

    Subclasses override :meth:`density`; the three integral methods fall back to
    adaptive quadrature. Arguments broadcast against each other.
    """

    homogeneous = False

    def density(self, x, z):
        raise NotImplementedError

    def _quad(self, x, a, b, power):
        x, a, b = np.broadcast_arrays(np.asarray(x, float), np.asarray(a, float), np.asarray(b, float))
        out = np.empty(x.shape)
        for idx in np.ndindex(x.shape):
            out[idx] = _quad_split(lambda z, xx=x[idx]: z**power * self.density(xx, z), a[idx], b[idx])
        return out

    def mass(self, x, a, b):
        return self._quad(x, a, b, 0)

    def moment1(self, x, a, b):
        return self._quad(x, a, b, 1)

    def moment2(self, x, a, b):
        return self._quad(x, a, b, 2)

    def exp_moment(self, x) -> float:
        """``int (e^z - 1) nu(x, dz)``, the exponential compensator."""
        return float(_quad_split(lambda z: np.expm1(z) * self.density(x, z), -np.inf, np.inf))

    def scale(self) -> float:
        """Square root of ``int z^2 nu(dz)``; used as a localization scale."""
        return math.sqrt(max(float(self.moment2(0.0, -np.inf, np.inf)), 0.0))


def _quad_split(func, a: float, b: float) -> float:
    """Integrate over (a, b], splitting at 0 and at +-1 where densities kink."""
    if not b > a:
        return 0.0
    points = [a] + [p for p in (-1.0, 0.0, 1.0) if a < p < b] + [b]
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        val, err = integrate.quad(func, lo, hi, limit=200, epsabs=1e-14, epsrel=1e-12)
        if not np.isfinite(val):
            raise NumericalError(f"jump quadrature did not converge on ({lo}, {hi}]")
        total += val
    return total


class DensityJumps(JumpMeasure):
    """Jump measure from a user supplied Lebesgue density ``density(x, z)``."""

    def __init__(self, density: Callable[[float, float], float], homogeneous: bool = False):
        self._density = density
        self.homogeneous = homogeneous

    def density(self, x, z):
        return self._density(x, z)


def _gamma_integral(c, lo, hi, k):
    """``int_lo^hi z^k e^{-c z} dz`` for ``0 <= lo <= hi <= inf``, k in {0, 1, 2}."""
    c = np.asarray(c, float)
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)

    def prim(z):
        # antiderivative is -P_k(z) e^{-cz}/c; zero at infinity
        with np.errstate(invalid="ignore", over="ignore"):
            ez = np.exp(-c * z)
            if k == 0:
                p = 1.0 / c
            elif k == 1:
                p = (z + 1.0 / c) / c
            else:
                p = (z * z + 2.0 * z / c + 2.0 / (c * c)) / c
            val = -p * ez
        return np.where(np.isinf(z), 0.0, val)

    return np.where(hi > lo, prim(hi) - prim(lo), 0.0)


class _TwoSidedExponentialFamily(JumpMeasure):
    """Homogeneous measure ``w_+ z^{k0} e^{-c_+ z}`` on z>0 and mirrored on z<0."""

    homogeneous = True
    # power offset: Kou densities are z^0 e^{-cz}, VG densities are z^{-1} e^{-cz}
    _offset = 0

    def _pos(self, lo, hi, power):
        raise NotImplementedError

    def _neg(self, lo, hi, power):
        raise NotImplementedError

    def _integral(self, a, b, power):
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        # positive half over (max(a,0), max(b,0)]
        plo, phi = np.maximum(a, 0.0), np.maximum(b, 0.0)
        pos = self._pos(plo, phi, power)
        # negative half over (min(a,0), min(b,0)] mapped to w = -z in [-min(b,0), -min(a,0))
        nlo, nhi = -np.minimum(b, 0.0), -np.minimum(a, 0.0)
        neg = self._neg(nlo, nhi, power) * (-1.0) ** power
        return pos + neg

    def mass(self, x, a, b):
        return self._integral(a, b, 0)

    def moment1(self, x, a, b):
        return self._integral(a, b, 1)

    def moment2(self, x, a, b):
        return self._integral(a, b, 2)


class KouJumps(_TwoSidedExponentialFamily):
    """Double-exponential jumps with intensity ``lam``.

    ``eta_plus`` and ``eta_minus`` are mean jump sizes (rates ``1/eta``).
    """

    def __init__(self, lam: float, p_plus: float, eta_plus: float, eta_minus: float):
        self.lam = float(lam)
        self.p_plus = float(p_plus)
        self.eta_plus = float(eta_plus)
        self.eta_minus = float(eta_minus)
        self.rate_plus = 1.0 / self.eta_plus
        self.rate_minus = 1.0 / self.eta_minus

    def density(self, x, z):
        z = np.asarray(z, float)
        up = self.lam * self.p_plus * self.rate_plus * np.exp(-self.rate_plus * np.abs(z))
        dn = self.lam * (1 - self.p_plus) * self.rate_minus * np.exp(-self.rate_minus * np.abs(z))
        return np.where(z > 0, up, np.where(z < 0, dn, 0.0))

    def _pos(self, lo, hi, power):
        c = self.rate_plus
        return self.lam * self.p_plus * c * _gamma_integral(c, lo, hi, power)

    def _neg(self, lo, hi, power):
        c = self.rate_minus
        return self.lam * (1 - self.p_plus) * c * _gamma_integral(c, lo, hi, power)

    def exp_moment(self, x=0.0) -> float:
        if self.rate_plus <= 1.0:
            raise ConfigError("E[e^J] is infinite unless eta_plus < 1", "model.eta_plus")
        p, a, b = self.p_plus, self.rate_plus, self.rate_minus
        kappa = p * a / (a - 1.0) + (1 - p) * b / (b + 1.0) - 1.0
        return self.lam * kappa


class VGJumps(_TwoSidedExponentialFamily):
    """Variance Gamma Levy measure ``e^{-M z}/(nu z)`` (z>0), ``e^{-G|z|}/(nu |z|)`` (z<0)."""

    def __init__(self, sigma: float, nu: float, theta: float):
        self.sigma = float(sigma)
        self.nu = float(nu)
        self.theta = float(theta)
        root = math.sqrt(2.0 / self.nu + self.theta**2 / self.sigma**2) / self.sigma
        drift = self.theta / self.sigma**2
        self.rate_plus = root - drift  # M
        self.rate_minus = root + drift  # G

    def density(self, x, z):
        z = np.asarray(z, float)
        az = np.abs(z)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.exp(self.theta * z / self.sigma**2 - math.sqrt(2.0 / self.nu + self.theta**2 / self.sigma**2) * az / self.sigma) / (self.nu * az)
        return np.where(z != 0, val, 0.0)

    def _one_side(self, c, lo, hi, power):
        if power == 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                val = np.where(np.isinf(hi), 0.0, special.exp1(c * np.where(np.isinf(hi), 1.0, hi)))
                val = special.exp1(c * lo) - val
            return np.where(hi > lo, val, 0.0) / self.nu
        return _gamma_integral(c, lo, hi, power - 1) / self.nu

    def _pos(self, lo, hi, power):
        return self._one_side(self.rate_plus, lo, hi, power)

    def _neg(self, lo, hi, power):
        return self._one_side(self.rate_minus, lo, hi, power)

    def exp_moment(self, x=0.0) -> float:
        arg = 1.0 - self.theta * self.nu - 0.5 * self.sigma**2 * self.nu
        if arg <= 0:
            raise ConfigError("VG parameters give an infinite exponential moment", "model.theta")
        return -math.log(arg) / self.nu


# --------------------------------------------------------------------------- #
# Models
# --------------------------------------------------------------------------- #


def _const(value: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.full(np.shape(x), value, dtype=float)


@dataclass(frozen=True)
class ModelSpec:
    """Drift, volatility and jump measure of a 1D Markov process.

    ``state_transform`` maps chain states to the asset price: ``"exp"`` for
    log-price models, ``"identity"`` otherwise. ``scale`` is a per-unit-time
    standard deviation proxy used for default localization.
    """

    drift: Callable[[np.ndarray], np.ndarray]
    vol: Callable[[np.ndarray], np.ndarray]
    jumps: JumpMeasure | None = None
    jump_truncation_eps: float = 1e-4
    state_transform: str = "identity"
    scale: float = 1.0
    name: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.state_transform not in ("identity", "exp"):
            raise ConfigError(f"unknown state transform {self.state_transform!r}", "model.state_transform")
        if not self.jump_truncation_eps > 0:
            raise ConfigError("must be positive", "model.jump_truncation_eps")

    @property
    def has_jumps(self) -> bool:
        return self.jumps is not None

    def to_price(self, x):
        x = np.asarray(x, float)
        return np.exp(x) if self.state_transform == "exp" else x

    def from_price(self, s):
        s = np.asarray(s, float)
        return np.log(s) if self.state_transform == "exp" else s

    def check(self, nodes: np.ndarray, *, require_diffusion: bool | None = None) -> None:
        """Validate the model invariants on a set of chain states."""
        nodes = np.asarray(nodes, float)
        vol = np.asarray(self.vol(nodes), float)
        if np.any(vol < 0) or not np.all(np.isfinite(vol)):
            raise ConfigError("volatility must be finite and nonnegative on the chain domain", "model.sigma")
        if require_diffusion is None:
            require_diffusion = not self.has_jumps
        if require_diffusion and np.any(vol <= 0):
            raise ConfigError("volatility must be strictly positive for a diffusion model", "model.sigma")
        if self.jumps is not None:
            x = nodes[len(nodes) // 2]
            eps = self.jump_truncation_eps
            small = float(self.jumps.moment2(x, -1.0, 1.0))
            large = float(self.jumps.mass(x, -np.inf, -1.0) + self.jumps.mass(x, 1.0, np.inf))
            if not (np.isfinite(small) and np.isfinite(large)) or small < 0 or large < 0:
                raise NumericalError("int (z^2 ^ 1) nu(dz) is not finite")
            if float(self.jumps.mass(x, eps, 1.0)) < 0:
                raise NumericalError("negative jump density")


@dataclass(frozen=True)
class RegimeModel:
    """Per-regime models with a regime generator ``Lambda`` (rows sum to zero)."""

    regimes: tuple[ModelSpec, ...]
    regime_generator: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.regime_generator, float)
        m = len(self.regimes)
        if lam.shape != (m, m):
            raise ConfigError(f"expected a {m}x{m} rate matrix, got shape {lam.shape}", "model.regime_rates")
        off = lam - np.diag(np.diag(lam))
        if np.any(off < 0):
            raise ConfigError("off-diagonal regime rates must be nonnegative", "model.regime_rates")
        if np.any(np.abs(lam.sum(axis=1)) > 1e-12 * max(1.0, np.abs(lam).max())):
            raise ConfigError("rows of the regime generator must sum to zero", "model.regime_rates")
        object.__setattr__(self, "regime_generator", lam)

    @property
    def n_regimes(self) -> int:
        return len(self.regimes)

    @property
    def state_transform(self) -> str:
        return self.regimes[0].state_transform

    @property
    def scale(self) -> float:
        return max(r.scale for r in self.regimes)

    def to_price(self, x):
        return self.regimes[0].to_price(x)


# --------------------------------------------------------------------------- #
# Presets
# --------------------------------------------------------------------------- #


def _get(params: Mapping[str, Any], key: str, default=None, *, positive=False, nonneg=False):
    if key not in params or params[key] is None:
        if default is None:
            raise ConfigError("missing required parameter", f"model.{key}")
        return default
    try:
        value = float(params[key])
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {params[key]!r}", f"model.{key}") from None
    if positive and not value > 0:
        raise ConfigError(f"must be positive, got {value}", f"model.{key}")
    if nonneg and value < 0:
        raise ConfigError(f"must be nonnegative, got {value}", f"model.{key}")
    return value


def _levy_log_price(sigma: float, jumps: JumpMeasure | None, r: float, d: float, name: str, params) -> ModelSpec:
    # drift in generator form: b = r - d - sigma^2/2 - int (e^z - 1 - z 1{|z|<=1}) nu(dz)
    drift = r - d - 0.5 * sigma**2
    var_rate = sigma**2
    if jumps is not None:
        drift -= jumps.exp_moment(0.0) - float(jumps.moment1(0.0, -1.0, 1.0))
        var_rate += float(jumps.moment2(0.0, -np.inf, np.inf))
    return ModelSpec(
        drift=_const(drift),
        vol=_const(sigma),
        jumps=jumps,
        state_transform="exp",
        scale=math.sqrt(var_rate),
        name=name,
        params=dict(params, drift=drift),
    )


def build_preset(name: str, params: Mapping[str, Any] | None = None) -> ModelSpec | RegimeModel:
    """Build one of the preset models ``BM, BS, KOU, VG, RS_BS, CIR``.

    Parameter names follow the config file keys: ``sigma, lambda, eta_plus,
    eta_minus, p_plus, p_minus, nu, theta, r, d, regimes, regime_rates`` and
    ``kappa`` (CIR mean-reversion speed).
    """
    params = dict(params or {})
    key = str(name).upper().replace("-", "_")
    if key == "BM":
        return ModelSpec(drift=_const(_get(params, "mu", 0.0)), vol=_const(_get(params, "sigma", 1.0, positive=True)),
                         name="BM", scale=_get(params, "sigma", 1.0), params=params)
    r = _get(params, "r", 0.05)
    d = _get(params, "d", 0.0)
    if key == "BS":
        sigma = _get(params, "sigma", positive=True)
        return _levy_log_price(sigma, None, r, d, "BS", params)
    if key == "KOU":
        sigma = _get(params, "sigma", nonneg=True)
        lam = _get(params, "lambda", positive=True)
        p_plus = _get(params, "p_plus", positive=True)
        p_minus = _get(params, "p_minus", 1.0 - p_plus, nonneg=True)
        if abs(p_plus + p_minus - 1.0) > 1e-12:
            raise ConfigError("p_plus + p_minus must equal 1", "model.p_minus")
        jumps = KouJumps(lam, p_plus, _get(params, "eta_plus", positive=True), _get(params, "eta_minus", positive=True))
        return _levy_log_price(sigma, jumps, r, d, "KOU", params)
    if key == "VG":
        sigma = _get(params, "sigma", positive=True)
        nu = _get(params, "nu", positive=True)
        theta = _get(params, "theta", 0.0)
        return _levy_log_price(0.0, VGJumps(sigma, nu, theta), r, d, "VG", params)
    if key == "CIR":
        kappa = _get(params, "kappa", positive=True)
        theta = _get(params, "theta", positive=True)
        sigma = _get(params, "sigma", positive=True)
        return ModelSpec(
            drift=lambda x: kappa * (theta - np.asarray(x, float)),
            vol=lambda x: sigma * np.sqrt(np.maximum(np.asarray(x, float), 0.0)),
            name="CIR",
            scale=sigma * math.sqrt(theta),
            params=params,
        )
    if key == "RS_BS":
        regimes = params.get("regimes")
        rates = params.get("regime_rates")
        if not regimes:
            raise ConfigError("missing required parameter", "model.regimes")
        if rates is None:
            raise ConfigError("missing required parameter", "model.regime_rates")
        specs = []
        for i, reg in enumerate(regimes):
            sub = dict(reg) if isinstance(reg, Mapping) else {"sigma": reg}
            sub.setdefault("r", r)
            sub.setdefault("d", d)
            try:
                specs.append(build_preset("BS", sub))
            except ConfigError as exc:
                raise ConfigError(str(exc), f"model.regimes[{i}]") from None
        rates = np.asarray(rates, float)
        if rates.ndim == 1 and len(specs) == 2 and rates.size == 2:
            # shorthand [lambda_12, lambda_21]
            rates = np.array([[-rates[0], rates[0]], [rates[1], -rates[1]]])
        return RegimeModel(tuple(specs), rates)
    raise ConfigError(f"unknown model type {name!r}; expected one of {PRESETS}", "model.type")


def jump_mass(model: ModelSpec, x: float, interval: tuple[float, float]) -> float:
    """Mass of ``nu(x, .)`` on the interval ``[a, b)``.

    Intervals reaching into ``(-eps, eps)`` (with ``eps = model.jump_truncation_eps``)
    are rejected for models with jumps: the mass there is infinite for
    infinite-activity measures.
    """
    a, b = float(interval[0]), float(interval[1])
    if model.jumps is None:
        return 0.0
    eps = model.jump_truncation_eps
    if b > a and a < eps and b > -eps:
        raise ValueError(f"interval [{a}, {b}) reaches into (-{eps}, {eps})")
    try:
        value = float(model.jumps.mass(x, a, b))
    except NumericalError as exc:
        raise NumericalError(f"jump mass on [{a}, {b}): {exc}") from None
    if not np.isfinite(value):
        raise NumericalError(f"jump mass on [{a}, {b}) is not finite")
    return max(value, 0.0)
