"""Scheme parameters: derivation, validation, presets, and the text encoding.

All logarithms are base 2. Where a bound calls for "log q" as an integer
dimension count (the trapdoor width 6 n log q), floor(log2 q) is used.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from . import zq
from .errors import FormatError, ParamError

M_REJECT = math.exp(1 + 1 / 288)
_REL_TOL = 1e-9


@dataclass(frozen=True)
class Params:
    n: int
    ell: int
    tau: int
    q: int
    m: int
    k: int
    kappa: int
    sigma: float
    sigma1: float
    sigma2: float
    sigma3: float
    M1: float
    M2: float
    M3: float
    gamma: int
    beta: float

    @property
    def dim(self) -> int:
        """Length of a signature vector, (1 + l) m."""
        return (1 + self.ell) * self.m

    @property
    def z_bound(self) -> float:
        return self.sigma3 * math.sqrt(self.dim)

    @property
    def commit_bits(self) -> int:
        return commit_bits(self.n)

    def replace(self, **changes) -> "Params":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        items = sorted(dataclasses.asdict(self).items())
        return "".join(f"{key}={_fmt(val)}\n" for key, val in items)

    @classmethod
    def from_text(cls, text: str) -> "Params":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise FormatError(f"bad params line {line!r}")
            values[key.strip()] = val.strip()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        if set(values) != set(types):
            raise FormatError(f"params keys mismatch: {sorted(set(types) ^ set(values))}")
        try:
            return cls(**{k: (int(v) if types[k] in (int, "int") else float(v)) for k, v in values.items()})
        except ValueError as exc:
            raise FormatError(str(exc)) from exc

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def commit_bits(n: int) -> int:
    """Commitment and opening length in bits. Never below 256 so binding survives tiny n."""
    return max(n, 256)


def log_q_floor(q: int) -> int:
    return q.bit_length() - 1


def trapdoor_floor(n: int, q: int) -> int:
    return 6 * n * log_q_floor(q)


def gamma_default(k: int, kappa: int) -> int:
    return int(math.floor(kappa + math.log2(math.comb(k, kappa))))


def sigma_chain(sigma: float, ell: int, m: int, k: int, kappa: int) -> tuple[float, float, float]:
    dim = (1 + ell) * m
    s1 = 12 * math.sqrt(kappa)
    s2 = 12 * sigma * s1 * math.sqrt(dim * k)
    s3 = 12 * s2 * math.sqrt(dim)
    return s1, s2, s3


def beta_bound(sigma: float, sigma2: float, sigma3: float, ell: int, m: int, kappa: int) -> float:
    root = math.sqrt((1 + ell) * m)
    return max((2 * sigma3 + 2 * sigma * math.sqrt(kappa)) * root, (2 * sigma3 + sigma2) * root)


def _witness_dim_floor(n: int, q: int, sigma: float, ell: int, m: int) -> float:
    d = sigma * math.sqrt((1 + ell) * m)
    return 64 + n * math.log2(q) / math.log2(2 * d + 1)


def derive(n: int, ell: int, q: int, k: int, kappa: int, sigma: float, m: int | None = None,
           gamma: int | None = None) -> Params:
    """Fill in every derived constant. ``m`` defaults to the smallest conforming width."""
    for name, v in (("n", n), ("k", k), ("kappa", kappa)):
        if v < 1:
            raise ParamError(f"{name} must be positive")
    if ell < 0:
        raise ParamError("tree depth must be non-negative")
    if kappa > k:
        raise ParamError("challenge weight kappa exceeds length k")
    if sigma < 1:
        raise ParamError("sigma must be >= 1")
    zq.check_modulus(q)
    if m is None:
        m = max(trapdoor_floor(n, q), math.ceil(2 * n * math.log2(q)), 2 * n * q.bit_length())
        while (1 + ell) * m <= _witness_dim_floor(n, q, sigma, ell, m):
            m += 1
    s1, s2, s3 = sigma_chain(sigma, ell, m, k, kappa)
    p = Params(
        n=n, ell=ell, tau=2**ell, q=q, m=m, k=k, kappa=kappa, sigma=float(sigma),
        sigma1=s1, sigma2=s2, sigma3=s3, M1=M_REJECT, M2=M_REJECT, M3=M_REJECT,
        gamma=gamma_default(k, kappa) if gamma is None else gamma,
        beta=beta_bound(sigma, s2, s3, ell, m, kappa),
    )
    errors = [v for v in validate(p) if v.level == "ERROR"]
    if errors:
        raise ParamError("; ".join(str(v) for v in errors))
    return p


@dataclass(frozen=True)
class Violation:
    constraint: str
    lhs: float
    rhs: float
    level: str = "ERROR"

    def __str__(self):
        return f"[{self.level}] {self.constraint}: lhs={self.lhs:.6g}, rhs={self.rhs:.6g}"


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _REL_TOL * max(abs(a), abs(b), 1.0)


def validate(p: Params) -> list[Violation]:
    """Every broken constraint, with both sides; the SIS hardness bound is INFO only."""
    out = []

    def need(ok, name, lhs, rhs, level="ERROR"):
        if not ok:
            out.append(Violation(name, float(lhs), float(rhs), level))

    if not zq.is_prime(p.q) or p.q < 3 or p.q % 2 == 0:
        out.append(Violation("q odd prime", p.q, 0))
        return out
    if min(p.n, p.k, p.kappa, p.m) < 1 or p.ell < 0 or p.kappa > p.k:
        out.append(Violation("1 ≤ κ ≤ k, n ≥ 1, m ≥ 1, ℓ ≥ 0", p.kappa, p.k))
        return out
    dim = (1 + p.ell) * p.m
    lg = math.log2(p.q)
    need(p.tau == 2**p.ell, "τ == 2^ℓ", p.tau, 2**p.ell)
    need(p.m >= trapdoor_floor(p.n, p.q), "m ≥ ⌈6·n·log q⌉", p.m, trapdoor_floor(p.n, p.q))
    need(p.m >= 2 * p.n * lg, "m ≥ 2·n·log₂ q", p.m, 2 * p.n * lg)
    need(p.sigma >= 1, "σ ≥ 1", p.sigma, 1)
    need(dim > _witness_dim_floor(p.n, p.q, p.sigma, p.ell, p.m), "(ℓ+1)·m > 64 + n·log₂ q / log₂(2d+1)", dim,
         _witness_dim_floor(p.n, p.q, p.sigma, p.ell, p.m))
    s1, s2, s3 = sigma_chain(p.sigma, p.ell, p.m, p.k, p.kappa)
    need(_close(p.sigma1, s1), "σ₁ == 12√κ", p.sigma1, s1)
    need(_close(p.sigma2, 12 * p.sigma * p.sigma1 * math.sqrt(dim * p.k)), "σ₂ == 12·σ·σ₁·√((1+ℓ)·m·k)", p.sigma2,
         12 * p.sigma * p.sigma1 * math.sqrt(dim * p.k))
    need(_close(p.sigma3, 12 * p.sigma2 * math.sqrt(dim)), "σ₃ == 12·σ₂·√((1+ℓ)·m)", p.sigma3,
         12 * p.sigma2 * math.sqrt(dim))
    for name in ("M1", "M2", "M3"):
        val = getattr(p, name)
        need(_close(val, M_REJECT), f"{name} == e^(1+1/288)", val, M_REJECT)
    entropy = p.kappa + math.log2(math.comb(p.k, p.kappa))
    need(entropy >= p.gamma, "C(k,κ)·2^κ ≥ 2^γ", entropy, p.gamma)
    b = beta_bound(p.sigma, p.sigma2, p.sigma3, p.ell, p.m, p.kappa)
    need(_close(p.beta, b), "β == max{(2σ₃+2σ√κ)·√((1+ℓ)m), (2σ₃+σ₂)·√((1+ℓ)m)}", p.beta, b)
    hard = p.beta * math.sqrt(p.n * math.log2(max(p.n, 2)))
    need(p.q >= hard, "q ≥ β·√(n·log₂ n) (SIS hardness, informational)", p.q, hard, level="INFO")
    return out


PRESETS = {
    "toy-T0": dict(n=2, ell=2, q=257, k=16, kappa=4, sigma=25),
    "toy-T1": dict(n=4, ell=2, q=12289, k=32, kappa=8, sigma=40),
}


def preset(name: str, **overrides) -> Params:
    if name not in PRESETS:
        raise ParamError(f"unknown profile {name!r}; choose from {sorted(PRESETS)}")
    args = dict(PRESETS[name])
    args.update(overrides)
    return derive(**args)
