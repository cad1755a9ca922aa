"""Named hyperparameter sets.

The four dataset presets carry the published settings (beta schedule, eta,
number of steps, kappa, autoencoder weight) with c starting at 10. "toy" is
tuned for the small bundled fixtures.
"""
from __future__ import annotations

from .core import PathConfig, SolverConfig

_TABLE = {
    "mnist": dict(beta=(0.0001, 0.001, 0.01, 0.1, 1.0), eta=10.0, kappa=0.75, gamma=100.0),
    "heloc": dict(beta=(0.00001, 0.0001, 0.001, 0.01, 0.1), eta=30.0, kappa=0.2, gamma=0.0),
    "celeba": dict(beta=(0.001, 0.005, 0.01, 0.05), eta=0.01, kappa=0.02, gamma=0.0),
    "20news": dict(beta=(0.0001, 0.0005, 0.001, 0.005, 0.1), eta=50.0, kappa=0.5, gamma=0.0),
    "toy": dict(beta=(0.05, 0.2, 0.5, 1.0, 2.0), eta=1.0, kappa=0.1, gamma=0.0),
}

PRESETS = tuple(_TABLE)
INITIAL_C = 10.0


def preset(name: str, **overrides) -> PathConfig:
    """Path configuration for a named preset; keyword overrides apply to the solver fields."""
    try:
        row = _TABLE[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    beta = overrides.pop("beta_schedule", row["beta"])
    base = SolverConfig(c=INITIAL_C, beta=beta[0], eta=row["eta"], kappa=row["kappa"], gamma=row["gamma"])
    if overrides:
        base = base.with_(**overrides)
    return PathConfig.from_schedule(beta, base)


def preset_table(name: str) -> dict:
    cfg = preset(name)
    return {
        "beta": list(cfg.beta_schedule),
        "eta": cfg.base.eta,
        "N": cfg.n_steps,
        "kappa": cfg.base.kappa,
        "gamma": cfg.base.gamma,
        "c": cfg.base.c,
    }
