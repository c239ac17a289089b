"""European option pricing with the Black-Scholes closed form.

Task input row: spot, strike, rate, dividend, volatility, maturity, option type
(0 = call, 1 = put). The cumulative normal uses the Abramowitz-Stegun 26.2.17
polynomial (absolute error below 7.5e-8), as the PARSEC kernel does.
"""

from __future__ import annotations

import numpy as np

from ..metrics import elementwise_relative_error
from ..tasks import TaskKind, Workload, never_reliable, register

FIELDS = ("spot", "strike", "rate", "dividend", "volatility", "maturity", "otype")
DIM_NAMES = FIELDS + ("price",)

AS_P = 0.2316419
AS_B = (0.319381530, -0.356563782, 1.781477937, -1.821255978, 1.330274429)
INV_SQRT_2PI = 0.39894228040143267794

# libm calls (exp, log, sqrt) are charged as this many flop-equivalents
TRANSCENDENTAL_COST = 20
# cndf: |x|, k (mul, add, div), Horner (5 mul + 4 add), pdf (square, scale, scale),
# 1 - pdf*poly (2), sign fix-up (1) = 19 basic ops + one exp
CNDF_COST = 19 + TRANSCENDENTAL_COST
# log(S/K): 1 div; d1: 8; d2: 1; two discount factors: 2 each; price incl. put branch: 7;
# plus sqrt, log and two discount exps
TASK_COST = 1 + 8 + 1 + 2 + 2 + 7 + 4 * TRANSCENDENTAL_COST + 2 * CNDF_COST

RANGES = {
    "train": {"spot": (10.0, 95.0)},
    "validation": {"spot": (100.0, 130.0)},
}


def cndf(x):
    """Standard normal CDF via Abramowitz-Stegun 26.2.17."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    k = 1.0 / (1.0 + AS_P * ax)
    b1, b2, b3, b4, b5 = AS_B
    poly = k * (b1 + k * (b2 + k * (b3 + k * (b4 + k * b5))))
    pdf = INV_SQRT_2PI * np.exp(-0.5 * ax * ax)
    n = 1.0 - pdf * poly
    return np.where(x < 0, 1.0 - n, n)


def price_batch(spot, strike, rate, dividend, vol, maturity, otype) -> np.ndarray:
    spot, strike, rate, dividend, vol, maturity = (
        np.asarray(a, dtype=np.float64) for a in (spot, strike, rate, dividend, vol, maturity))
    sqrt_t = np.sqrt(maturity)
    d1 = (np.log(spot / strike) + (rate - dividend + 0.5 * vol * vol) * maturity) / (vol * sqrt_t)
    d2 = d1 - vol * sqrt_t
    disc_q = np.exp(-dividend * maturity)
    disc_r = np.exp(-rate * maturity)
    call = spot * disc_q * cndf(d1) - strike * disc_r * cndf(d2)
    put = strike * disc_r * (1.0 - cndf(d2)) - spot * disc_q * (1.0 - cndf(d1))
    price = np.where(np.asarray(otype) >= 0.5, put, call)
    return np.maximum(price, 0.0)


def _validate(x: np.ndarray) -> None:
    spot, strike, _, _, vol, maturity = (x[:, i] for i in range(6))
    if not (np.all(spot > 0) and np.all(strike > 0) and np.all(vol > 0) and np.all(maturity > 0)):
        raise ValueError("spot, strike, volatility and maturity must be positive")


def blackscholes_task(spot, strike, rate, dividend, volatility, maturity, otype=0) -> float:
    x = np.array([[spot, strike, rate, dividend, volatility, maturity, otype]], dtype=np.float64)
    _validate(x)
    return float(price_batch(*x.T)[0])


def _run_batch(inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    _validate(x)
    return price_batch(*x.T).astype(np.float32)[:, None]


def _features(inputs: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    feats = np.empty((inputs.shape[0], 8), dtype=np.float32)
    feats[:, :7] = inputs[:, :7]
    feats[:, 7] = outputs[:, 0]
    return feats


def _cost(inputs: np.ndarray) -> np.ndarray:
    return np.full(inputs.shape[0], float(TASK_COST))


def _quality(workload: Workload, outputs, reliable) -> float:
    return elementwise_relative_error(outputs, reliable)


def generate(range_profile: str, count: int, rng: np.random.Generator) -> Workload:
    lo, hi = RANGES[range_profile]["spot"]
    spot = rng.uniform(lo, hi, count)
    x = np.column_stack([
        spot,
        spot * rng.uniform(0.7, 1.3, count),
        rng.uniform(0.01, 0.10, count),
        rng.uniform(0.0, 0.05, count),
        rng.uniform(0.05, 0.65, count),
        rng.uniform(0.1, 3.0, count),
        rng.integers(0, 2, count).astype(np.float64),
    ])
    # inputs are stored as single precision, like the deployed kernel's data file
    return Workload("blackscholes", x.astype(np.float32).astype(np.float64))


KIND = register(TaskKind(
    name="blackscholes",
    input_len=7,
    output_len=1,
    dim_names=DIM_NAMES,
    run_batch=_run_batch,
    features_batch=_features,
    cost_batch=_cost,
    reliable_batch=never_reliable,
    perturbable_indices=(7,),
    quality_kind="mean_relative_error",
    quality=_quality,
    description="Black-Scholes price of one European option",
))
