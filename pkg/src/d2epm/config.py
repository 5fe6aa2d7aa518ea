"""Flat ``key = value`` run configuration with typed keys.

Blank lines and ``#`` comments are ignored. Unknown keys are errors.
"""

__all__ = ["CONFIG_KEYS", "load_config", "parse_config", "config_help", "resolve"]


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key: (type, default, description)
CONFIG_KEYS = {
    "K": (int, 50, "truncation level (initial number of communities)"),
    "g": (float, 0.1, "gamma shape of the community weights"),
    "c0": (float, 1.0, "concentration of the community probabilities"),
    "alpha": (float, None, "mean of the community probabilities (default 1/K)"),
    "a0": (float, 0.01, "gamma shape of eta"),
    "b0": (float, 0.01, "gamma rate of eta"),
    "iterations": (int, 3000, "total iterations"),
    "burn_in": (int, 2000, "iterations discarded before collection"),
    "collect_every": (int, 1, "collect every n-th post-burn-in sample"),
    "seed": (int, 0, "random seed"),
    "window": (float, 1.0, "snapshot width in timestamp units"),
    "heldout": (float, 0.2, "fraction of the (t, i<j) grid held out"),
    "repeats": (int, 1, "independent train/held-out partitions"),
    "eval_every": (int, 0, "record held-out AUROC every n iterations (0 = never)"),
    "minibatch_fraction": (float, 0.25, "SGRLD minibatch size as a fraction of training edges"),
    "step_a": (float, 10.0, "SGRLD step size constant a"),
    "step_b": (float, 1000.0, "SGRLD step size constant b"),
    "step_c": (float, 0.6, "SGRLD step size decay exponent c"),
    "mk_ema_decay": (float, 0.9, "decay of the reduced-mean count estimate"),
    "inject_noise": (_bool, True, "SGRLD Langevin noise on/off"),
}


def parse_config(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ValueError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key][0](value)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))


def resolve(file_values=None, overrides=None):
    """Defaults, then file values, then non-None overrides."""
    cfg = {k: v[1] for k, v in CONFIG_KEYS.items()}
    cfg.update(file_values or {})
    cfg.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return cfg


def config_help():
    return "\n".join(f"  {k:<20s}{t.__name__ if t is not _bool else 'bool':<7s}{desc} (default {d})"
                     for k, (t, d, desc) in CONFIG_KEYS.items())
