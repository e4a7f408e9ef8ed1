"""Seeded synthetic embedding streams with controllable class geometry.

Each class draws normal patches from an isotropic Gaussian around a
class-specific mean. The noise is parametrized by its expected Euclidean
norm (``noise_scale``): per-coordinate standard deviation is
noise_scale / sqrt(d), so "an offset of 5 sigma" means a displacement whose
length is five times the typical noise magnitude regardless of dimension.

Anomalous test images take a fraction of their patches and displace them by
``anomaly_offset * noise_scale`` along a fixed per-class direction. Pointing
that direction at another class's mean makes the two classes interfere when
they share a memory bank, which is how the forgetting scenarios are built;
leaving it random makes anomalies plainly separable.

Class means control routing: classes sharing a mean (up to jitter) have
centroid cosine similarity near 1, classes on orthogonal axes near 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import ClassData, ClassStream, EmbeddingRecord, Label


@dataclass
class SyntheticClassSpec:
    name: str
    mean: np.ndarray
    anomaly_direction: np.ndarray | None = None
    n_train: int = 40
    n_test_normal: int = 20
    n_test_anomalous: int = 20
    grid: tuple[int, int] = (5, 10)
    noise_scale: float = 1.0
    anomaly_offset: float = 5.0
    anomaly_patch_fraction: float = 0.3


def generate_stream(specs: list[SyntheticClassSpec], seed: int = 0) -> ClassStream:
    dimension = int(np.asarray(specs[0].mean).shape[0])
    classes = []
    for k, spec in enumerate(specs):
        rng = np.random.default_rng([seed, k])
        classes.append(_generate_class(spec, dimension, rng))
    return ClassStream(dimension=dimension, classes=classes)


def _generate_class(
    spec: SyntheticClassSpec, dimension: int, rng: np.random.Generator
) -> ClassData:
    mean = np.asarray(spec.mean, dtype=np.float64)
    if mean.shape != (dimension,):
        raise ValueError(
            f"class {spec.name!r}: mean shape {mean.shape} != ({dimension},)"
        )
    if spec.anomaly_direction is None:
        direction = rng.standard_normal(dimension)
    else:
        direction = np.asarray(spec.anomaly_direction, dtype=np.float64)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise ValueError(f"class {spec.name!r}: zero anomaly direction")
    offset = direction / norm * spec.anomaly_offset * spec.noise_scale

    grid_h, grid_w = spec.grid
    n_patches = grid_h * grid_w
    sigma = spec.noise_scale / np.sqrt(dimension)

    def normal_patches(count: int) -> np.ndarray:
        return mean + sigma * rng.standard_normal((count, n_patches, dimension))

    train = [
        EmbeddingRecord(
            image_id=f"{spec.name}_train_{i:04d}",
            label=Label.NORMAL,
            grid_h=grid_h,
            grid_w=grid_w,
            patches=img,
        )
        for i, img in enumerate(normal_patches(spec.n_train))
    ]
    test = [
        EmbeddingRecord(
            image_id=f"{spec.name}_good_{i:04d}",
            label=Label.NORMAL,
            grid_h=grid_h,
            grid_w=grid_w,
            patches=img,
        )
        for i, img in enumerate(normal_patches(spec.n_test_normal))
    ]
    n_displaced = max(1, int(round(spec.anomaly_patch_fraction * n_patches)))
    for i, img in enumerate(normal_patches(spec.n_test_anomalous)):
        hit = rng.choice(n_patches, size=n_displaced, replace=False)
        img[hit] += offset
        test.append(
            EmbeddingRecord(
                image_id=f"{spec.name}_anom_{i:04d}",
                label=Label.ANOMALOUS,
                grid_h=grid_h,
                grid_w=grid_w,
                patches=img,
            )
        )
    return ClassData(name=spec.name, train=train, test=test)


def axis_mean(dimension: int, axis: int, scale: float) -> np.ndarray:
    out = np.zeros(dimension)
    out[axis] = scale
    return out


def similar_class_specs(
    names: list[str],
    dimension: int = 32,
    scale: float = 10.0,
    jitter: float = 0.05,
    seed: int = 0,
    **kwargs,
) -> list[SyntheticClassSpec]:
    """Classes around one shared mean; centroid cosine similarity near 1."""
    rng = np.random.default_rng([seed, 997])
    base = axis_mean(dimension, 0, scale)
    return [
        SyntheticClassSpec(
            name=name,
            mean=base + jitter * scale * rng.standard_normal(dimension) / np.sqrt(dimension),
            **kwargs,
        )
        for name in names
    ]


def orthogonal_class_specs(
    names: list[str],
    dimension: int = 32,
    scale: float = 10.0,
    **kwargs,
) -> list[SyntheticClassSpec]:
    """One coordinate axis per class; centroid cosine similarity near 0."""
    if len(names) > dimension:
        raise ValueError(f"need dimension >= {len(names)} for orthogonal means")
    return [
        SyntheticClassSpec(name=name, mean=axis_mean(dimension, i, scale), **kwargs)
        for i, name in enumerate(names)
    ]


def two_cluster_specs(
    n_per_cluster: int = 3,
    dimension: int = 32,
    noise_scale: float = 1.0,
    anomaly_offset: float = 5.0,
    jitter: float = 0.1,
    seed: int = 0,
    **kwargs,
) -> list[SyntheticClassSpec]:
    """Two dissimilar super-clusters whose anomalies point at each other.

    Cluster means sit on orthogonal axes exactly ``anomaly_offset *
    noise_scale`` apart, so a displaced patch from one cluster lands on the
    other cluster's normal region. Sharing one expert across clusters then
    destroys anomaly separation for earlier classes, while split experts keep
    it intact.
    """
    rng = np.random.default_rng([seed, 4099])
    radius = anomaly_offset * noise_scale / np.sqrt(2.0)
    cluster_means = [axis_mean(dimension, 0, radius), axis_mean(dimension, 1, radius)]
    specs = []
    for cluster in range(2):
        own = cluster_means[cluster]
        other = cluster_means[1 - cluster]
        for i in range(n_per_cluster):
            wobble = jitter * noise_scale * rng.standard_normal(dimension) / np.sqrt(dimension)
            specs.append(
                SyntheticClassSpec(
                    name=f"cluster{cluster}_class{i}",
                    mean=own + wobble,
                    anomaly_direction=other - own,
                    noise_scale=noise_scale,
                    anomaly_offset=anomaly_offset,
                    **kwargs,
                )
            )
    # Interleave so each expert keeps receiving classes after its first.
    ordered = []
    for i in range(n_per_cluster):
        ordered.append(specs[i])
        ordered.append(specs[n_per_cluster + i])
    return ordered
