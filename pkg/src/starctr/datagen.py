"""Synthetic multi-domain CTR data with controllable commonality/distinction.

Ground truth is logistic in latent ID factors: every vocabulary entry carries
a hidden factor vector, an example's feature vector is the concatenation of
its pooled field factors, and the click probability for domain p is

    sigmoid(w_shared . phi(x) + alpha_p * w_p . phi(x) + bias_p)

``alpha_p`` (the profile's ``specificity``) blends shared and domain-specific
label functions, ``feature_shift`` tilts which IDs each domain samples (so
domains have genuinely different input distributions), and ``bias_p`` is
calibrated by bisection so the realized CTR hits the profile's target.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import CalibrationError, ConfigError, DataError, ParseError
from .layers import sigmoid
from .tensor import make_rng

FIELDS = ("behavior", "profile", "item", "context")


class Example(NamedTuple):
    behavior: tuple[int, ...]
    profile: int
    item: int
    context: int
    y: int
    p: int


@dataclass
class DomainProfile:
    traffic_share: float
    base_ctr: float
    specificity: float = 0.6
    feature_shift: np.ndarray | None = None


@dataclass
class GenConfig:
    profiles: list[DomainProfile]
    n_examples: int = 200_000
    seed: int = 0
    sample_seed: int = -1        # -1: reuse seed; set differently for a holdout
    latent_dim: int = 8
    vocab_items: int = 4000
    vocab_profiles: int = 1200
    vocab_contexts: int = 50
    behavior_mean_len: float = 4.0
    behavior_max_len: int = 10
    shared_weight_scale: float = 0.35
    domain_weight_scale: float = 0.5
    # Constant added to every shared-weight coordinate: puts part of the label
    # signal on the overall feature intensity (the row mean), mimicking an
    # "engagement level" effect.
    weight_mean_shift: float = 0.15
    # Rank of the per-domain deviation weights.  0 draws each domain's
    # deviation independently; r > 0 draws them from a shared r-dimensional
    # subspace (domains deviate in related directions, as related business
    # domains do), scaled to keep the same total deviation energy.
    domain_rank: int = 2

    @property
    def num_domains(self) -> int:
        return len(self.profiles)

    @property
    def effective_sample_seed(self) -> int:
        return self.seed if self.sample_seed < 0 else self.sample_seed

    def validate(self):
        if not self.profiles:
            raise ConfigError("at least one domain profile required")
        shares = np.array([p.traffic_share for p in self.profiles])
        if abs(shares.sum() - 1.0) > 1e-9:
            raise ConfigError(f"traffic shares sum to {shares.sum()}, not 1")
        for i, p in enumerate(self.profiles, start=1):
            if not 0.0 < p.base_ctr < 1.0:
                raise CalibrationError(
                    f"domain {i}: base_ctr {p.base_ctr} outside (0, 1)"
                )
            if p.feature_shift is not None and len(p.feature_shift) != self.latent_dim:
                raise ConfigError(
                    f"domain {i}: feature_shift length {len(p.feature_shift)} "
                    f"!= latent_dim {self.latent_dim}"
                )


# Percentages and CTRs follow the heterogeneity of real display-ad domains:
# shares span ~5x, CTRs span ~10x (including the 1.27% and 12.03% extremes,
# which sit on the smaller domains as they do in real traffic).
_DEFAULT_SHARES = (0.2876, 0.1676, 0.1216, 0.1000, 0.0585)
_DEFAULT_CTRS = (0.0375, 0.0324, 0.0214, 0.1203, 0.0127)


def default_profiles(num_domains: int = 5, seed: int = 0,
                     specificity: float = 0.6,
                     shift_scale: float = 2.0,
                     latent_dim: int = 8) -> list[DomainProfile]:
    """Heterogeneous domain profiles with distinct latent shift directions."""
    rng = make_rng(seed, stream=7)
    raw = np.array([_DEFAULT_SHARES[i % len(_DEFAULT_SHARES)] * (1.0 + i // 5)
                    for i in range(num_domains)])
    shares = raw / raw.sum()
    profiles = []
    for i in range(num_domains):
        shift = rng.normal(size=latent_dim)
        shift *= shift_scale / np.linalg.norm(shift)
        profiles.append(DomainProfile(
            traffic_share=float(shares[i]),
            base_ctr=_DEFAULT_CTRS[i % len(_DEFAULT_CTRS)],
            specificity=specificity,
            feature_shift=shift,
        ))
    return profiles


def default_gen_config(num_domains: int = 5, seed: int = 0,
                       n_examples: int = 200_000, **overrides) -> GenConfig:
    profiles = default_profiles(
        num_domains,
        seed=overrides.pop("profile_seed", 0),
        specificity=overrides.pop("specificity", 0.6),
        shift_scale=overrides.pop("shift_scale", 2.0),
        latent_dim=overrides.get("latent_dim", 8),
    )
    return GenConfig(profiles=profiles, n_examples=n_examples, seed=seed,
                     **overrides)


@dataclass
class GroundTruth:
    """Hidden factors and weights behind a generated dataset."""
    latent_items: np.ndarray
    latent_profiles: np.ndarray
    latent_contexts: np.ndarray
    w_shared: np.ndarray
    w_domain: np.ndarray          # (M, 4k)
    biases: np.ndarray            # (M,)

    def effective_weights(self, p: int, alpha: float) -> np.ndarray:
        return self.w_shared + alpha * self.w_domain[p - 1]


@dataclass
class GenResult:
    examples: list[Example]
    truth: GroundTruth
    true_probs: np.ndarray
    realized_ctr: dict[int, float] = field(default_factory=dict)


def _draw_categorical(rng_uniform: np.ndarray, cum_probs: np.ndarray) -> np.ndarray:
    return np.searchsorted(cum_probs, rng_uniform, side="right").clip(
        0, cum_probs.size - 1
    )


def _domain_cum_probs(latent: np.ndarray, shift: np.ndarray | None) -> np.ndarray:
    if shift is None:
        logits = np.zeros(latent.shape[0])
    else:
        logits = latent @ shift
    logits -= logits.max()
    probs = np.exp(logits)
    probs /= probs.sum()
    return np.cumsum(probs)


def _calibrate_bias(raw_logits: np.ndarray, target: float) -> float:
    """Bisect the additive bias so mean(sigmoid(raw + b)) == target."""
    lo, hi = -60.0, 60.0
    if not (sigmoid(raw_logits + lo).mean() < target < sigmoid(raw_logits + hi).mean()):
        raise CalibrationError(f"CTR target {target} unreachable by bias shift")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if sigmoid(raw_logits + mid).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_examples(config: GenConfig) -> GenResult:
    """Draw a full dataset (in arrival order) plus its ground truth."""
    config.validate()
    m = config.num_domains
    k = config.latent_dim
    n = config.n_examples
    # The world (latent factors, ground-truth weights) comes from `seed`;
    # which examples get drawn comes from `sample_seed`, so a holdout set is
    # the same world with a different sample_seed.
    rng_lat = make_rng(config.seed, stream=0)
    rng_w = make_rng(config.seed, stream=1)
    rng_s = make_rng(config.effective_sample_seed, stream=2)
    rng_y = make_rng(config.effective_sample_seed, stream=3)

    latent_items = rng_lat.normal(size=(config.vocab_items, k))
    latent_profiles = rng_lat.normal(size=(config.vocab_profiles, k))
    latent_contexts = rng_lat.normal(size=(config.vocab_contexts, k))
    w_shared = (rng_w.normal(0.0, config.shared_weight_scale, size=4 * k)
                + config.weight_mean_shift)
    if config.domain_rank > 0:
        r = config.domain_rank
        basis, _ = np.linalg.qr(rng_w.normal(size=(4 * k, r)))
        coords = rng_w.normal(
            0.0, config.domain_weight_scale * np.sqrt(4 * k / r), size=(m, r)
        )
        w_domain = coords @ basis.T
    else:
        w_domain = rng_w.normal(0.0, config.domain_weight_scale,
                                size=(m, 4 * k))

    shares = np.array([p.traffic_share for p in config.profiles])
    domains = _draw_categorical(rng_s.uniform(size=n), np.cumsum(shares)) + 1

    lens = np.minimum(rng_s.poisson(config.behavior_mean_len, size=n),
                      config.behavior_max_len)
    total_beh = int(lens.sum())
    u_beh = rng_s.uniform(size=total_beh)
    u_item = rng_s.uniform(size=n)
    u_prof = rng_s.uniform(size=n)
    u_ctx = rng_s.uniform(size=n)

    beh_ids = np.zeros(total_beh, dtype=np.int64)
    item_ids = np.zeros(n, dtype=np.int64)
    prof_ids = np.zeros(n, dtype=np.int64)
    ctx_ids = np.zeros(n, dtype=np.int64)
    flat_domain = np.repeat(domains, lens)
    for p in range(1, m + 1):
        shift = config.profiles[p - 1].feature_shift
        cum_item = _domain_cum_probs(latent_items, shift)
        cum_prof = _domain_cum_probs(latent_profiles, shift)
        cum_ctx = _domain_cum_probs(latent_contexts, shift)
        fm = flat_domain == p
        em = domains == p
        beh_ids[fm] = _draw_categorical(u_beh[fm], cum_item)
        item_ids[em] = _draw_categorical(u_item[em], cum_item)
        prof_ids[em] = _draw_categorical(u_prof[em], cum_prof)
        ctx_ids[em] = _draw_categorical(u_ctx[em], cum_ctx)

    # Pooled latent features, same convention as the model: mean over the
    # behavior list (zeros when empty), then concat with the single fields.
    phi = np.zeros((n, 4 * k))
    owner = np.repeat(np.arange(n), lens)
    np.add.at(phi[:, 0:k], owner, latent_items[beh_ids])
    phi[:, 0:k] /= np.maximum(lens, 1)[:, None]
    phi[:, k:2 * k] = latent_profiles[prof_ids]
    phi[:, 2 * k:3 * k] = latent_items[item_ids]
    phi[:, 3 * k:4 * k] = latent_contexts[ctx_ids]

    logits = np.zeros(n)
    biases = np.zeros(m)
    for p in range(1, m + 1):
        prof = config.profiles[p - 1]
        em = domains == p
        raw = phi[em] @ (w_shared + prof.specificity * w_domain[p - 1])
        biases[p - 1] = _calibrate_bias(raw, prof.base_ctr) if em.any() else 0.0
        logits[em] = raw + biases[p - 1]

    probs = sigmoid(logits)
    ys = (rng_y.uniform(size=n) < probs).astype(np.int64)

    offsets = np.concatenate(([0], np.cumsum(lens)))
    examples = [
        Example(
            behavior=tuple(int(b) for b in beh_ids[offsets[i]:offsets[i + 1]]),
            profile=int(prof_ids[i]),
            item=int(item_ids[i]),
            context=int(ctx_ids[i]),
            y=int(ys[i]),
            p=int(domains[i]),
        )
        for i in range(n)
    ]
    truth = GroundTruth(latent_items, latent_profiles, latent_contexts,
                        w_shared, w_domain, biases)
    realized = {
        p: float(ys[domains == p].mean()) for p in range(1, m + 1)
        if (domains == p).any()
    }
    return GenResult(examples, truth, probs, realized)


def generate(config: GenConfig, path: str) -> GenResult:
    """Generate a dataset and write it to ``path``."""
    result = generate_examples(config)
    write_dataset(result.examples, path)
    return result


# ---------------------------------------------------------------------------
# Dataset file format: one example per line,
#   p<TAB>y<TAB>behavior:id,id,...<TAB>profile:id<TAB>item:id<TAB>ctx:id
# ---------------------------------------------------------------------------

def format_example(ex: Example) -> str:
    beh = ",".join(str(b) for b in ex.behavior)
    return (f"{ex.p}\t{ex.y}\tbehavior:{beh}\tprofile:{ex.profile}"
            f"\titem:{ex.item}\tctx:{ex.context}")


def write_dataset(examples: Iterable[Example], path: str):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for ex in examples:
            fh.write(format_example(ex))
            fh.write("\n")


def _parse_tagged(part: str, tag: str, lineno: int) -> str:
    prefix = tag + ":"
    if not part.startswith(prefix):
        raise ParseError(f"expected '{tag}:' field, got {part!r}", lineno)
    return part[len(prefix):]


def parse_example(line: str, lineno: int = 0) -> Example:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 6:
        raise ParseError(f"expected 6 tab-separated fields, got {len(parts)}",
                         lineno)
    try:
        p = int(parts[0])
        y = int(parts[1])
    except ValueError as exc:
        raise ParseError(f"bad domain/label: {exc}", lineno) from None
    if p < 1:
        raise ParseError(f"domain {p} invalid: domains are 1-based", lineno)
    if y not in (0, 1):
        raise ParseError(f"label {y} outside {{0, 1}}", lineno)
    beh_raw = _parse_tagged(parts[2], "behavior", lineno)
    try:
        behavior = tuple(int(t) for t in beh_raw.split(",")) if beh_raw else ()
        profile = int(_parse_tagged(parts[3], "profile", lineno))
        item = int(_parse_tagged(parts[4], "item", lineno))
        context = int(_parse_tagged(parts[5], "ctx", lineno))
    except ValueError as exc:
        raise ParseError(f"bad id: {exc}", lineno) from None
    return Example(behavior, profile, item, context, y, p)


def read_dataset(path: str) -> list[Example]:
    examples = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                examples.append(parse_example(line, lineno))
    return examples


# ---------------------------------------------------------------------------
# Generator config file: flat key=value, one DomainProfile per domain.N.*
# ---------------------------------------------------------------------------

_GEN_SCALARS = {
    "examples": ("n_examples", int),
    "seed": ("seed", int),
    "sample_seed": ("sample_seed", int),
    "latent_dim": ("latent_dim", int),
    "vocab_items": ("vocab_items", int),
    "vocab_profiles": ("vocab_profiles", int),
    "vocab_contexts": ("vocab_contexts", int),
    "behavior_mean_len": ("behavior_mean_len", float),
    "behavior_max_len": ("behavior_max_len", int),
    "shared_weight_scale": ("shared_weight_scale", float),
    "domain_weight_scale": ("domain_weight_scale", float),
    "weight_mean_shift": ("weight_mean_shift", float),
    "domain_rank": ("domain_rank", int),
}

_PROFILE_KEYS = ("traffic_share", "base_ctr", "specificity", "feature_shift")


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


def parse_gen_config(text: str) -> GenConfig:
    kv = parse_kv_text(text)
    if "domains" not in kv:
        raise ConfigError("missing required key 'domains'")
    m = int(kv.pop("domains"))
    kwargs = {}
    domain_kv: dict[int, dict[str, str]] = {i: {} for i in range(1, m + 1)}
    unknown = []
    for key, value in kv.items():
        if key in _GEN_SCALARS:
            attr, conv = _GEN_SCALARS[key]
            kwargs[attr] = conv(value)
        elif key.startswith("domain."):
            parts = key.split(".", 2)
            if len(parts) != 3 or not parts[1].isdigit() \
                    or parts[2] not in _PROFILE_KEYS:
                unknown.append(key)
                continue
            idx = int(parts[1])
            if not 1 <= idx <= m:
                raise ConfigError(f"domain index {idx} outside 1..{m} in {key!r}")
            domain_kv[idx][parts[2]] = value
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(sorted(unknown)))
    profiles = []
    for i in range(1, m + 1):
        d = domain_kv[i]
        for required in ("traffic_share", "base_ctr"):
            if required not in d:
                raise ConfigError(f"domain.{i}.{required} missing")
        shift = None
        if "feature_shift" in d and d["feature_shift"]:
            shift = np.array([float(t) for t in d["feature_shift"].split(",")])
        profiles.append(DomainProfile(
            traffic_share=float(d["traffic_share"]),
            base_ctr=float(d["base_ctr"]),
            specificity=float(d.get("specificity", 0.6)),
            feature_shift=shift,
        ))
    config = GenConfig(profiles=profiles, **kwargs)
    config.validate()
    return config


def format_gen_config(config: GenConfig) -> str:
    buf = io.StringIO()
    buf.write(f"domains={config.num_domains}\n")
    buf.write(f"examples={config.n_examples}\n")
    buf.write(f"seed={config.seed}\n")
    buf.write(f"sample_seed={config.sample_seed}\n")
    buf.write(f"latent_dim={config.latent_dim}\n")
    buf.write(f"vocab_items={config.vocab_items}\n")
    buf.write(f"vocab_profiles={config.vocab_profiles}\n")
    buf.write(f"vocab_contexts={config.vocab_contexts}\n")
    buf.write(f"behavior_mean_len={config.behavior_mean_len!r}\n")
    buf.write(f"behavior_max_len={config.behavior_max_len}\n")
    buf.write(f"shared_weight_scale={config.shared_weight_scale!r}\n")
    buf.write(f"domain_weight_scale={config.domain_weight_scale!r}\n")
    buf.write(f"weight_mean_shift={config.weight_mean_shift!r}\n")
    buf.write(f"domain_rank={config.domain_rank}\n")
    for i, prof in enumerate(config.profiles, start=1):
        buf.write(f"domain.{i}.traffic_share={prof.traffic_share!r}\n")
        buf.write(f"domain.{i}.base_ctr={prof.base_ctr!r}\n")
        buf.write(f"domain.{i}.specificity={prof.specificity!r}\n")
        if prof.feature_shift is not None:
            shift = ",".join(repr(float(v)) for v in prof.feature_shift)
            buf.write(f"domain.{i}.feature_shift={shift}\n")
    return buf.getvalue()


def load_gen_config(path: str) -> GenConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_gen_config(fh.read())


def domain_counts(examples: Iterable[Example]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for ex in examples:
        counts[ex.p] = counts.get(ex.p, 0) + 1
    return counts


def validate_ids(examples: Iterable[Example], vocab_items: int,
                 vocab_profiles: int, vocab_contexts: int):
    """Raise DataError if any example's ids exceed the given vocabularies."""
    for i, ex in enumerate(examples, start=1):
        if any(b >= vocab_items or b < 0 for b in ex.behavior) \
                or not 0 <= ex.item < vocab_items:
            raise DataError(f"example {i}: item id outside vocab {vocab_items}")
        if not 0 <= ex.profile < vocab_profiles:
            raise DataError(
                f"example {i}: profile id outside vocab {vocab_profiles}")
        if not 0 <= ex.context < vocab_contexts:
            raise DataError(
                f"example {i}: context id outside vocab {vocab_contexts}")
