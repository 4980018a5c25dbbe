import numpy as np

from hmtml.core.models import DomainData


def make_domains(seed: int, dims=(4, 5, 3), n_per_class=3, n_classes=2):
    """Small labeled domains with class-shifted Gaussian samples."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(1, n_classes + 1), n_per_class)
    domains = []
    for m, dim in enumerate(dims):
        centers = rng.normal(scale=2.0, size=(n_classes, dim))
        samples = centers[labels - 1] + rng.normal(size=(labels.size, dim))
        domains.append(DomainData(samples, labels, domain_id=m))
    return domains


def unit_columns(rng, dim, n_tasks):
    weights = rng.normal(size=(dim, n_tasks))
    return weights / np.linalg.norm(weights, axis=0)
