from dataclasses import dataclass, field
import numpy as np
import pandas as pd
from sklearn.metrics.pairwise import cosine_similarity

from ..components.adapters import RouterTrace

import logging

log = logging.getLogger(__name__)


class StatisticsUndefinedError(ValueError):
    """
    Raised when clustering statistics cannot be formed from the traces
    """


@dataclass
class RouterAnalysis:
    """
    Clustering statistics of per-sample router profiles

    :param dict family_profiles: family -> mean profile
    :param float intra: mean cosine similarity of profile pairs of one family
    :param float inter: mean cosine similarity of profile pairs of different
        families
    :param pd.DataFrame scatter: columns family, sample_index, pair, head_x,
        head_y, x, y
    """

    family_profiles: dict = field(default_factory=dict)
    intra: float = None
    inter: float = None
    scatter: pd.DataFrame = None

    @property
    def separation(self) -> float:
        return self.intra - self.inter

    def to_dict(self) -> dict:
        return {
            "family_profiles": {
                f: [float(v) for v in p] for f, p in self.family_profiles.items()
            },
            "intra_similarity": float(self.intra),
            "inter_similarity": float(self.inter),
            "separation": float(self.separation),
        }


def analyze_router(traces, center_profiles: bool = False) -> RouterAnalysis:
    """
    Per-family profiles, intra/inter-family cosine similarity and head-pair
    scatter coordinates

    Similarities are averaged over all unordered pairs of per-sample profiles
    (intra: same family, inter: different families). With center_profiles the
    mean over all samples is subtracted before the cosine.

    :param traces: dict family -> RouterTrace, or a list of RouterTraces
    :param bool center_profiles: center the profiles first
    :return: statistics and scatter coordinates
    :rtype: RouterAnalysis
    """
    if isinstance(traces, dict):
        traces = list(traces.values())
    traces = [t for t in traces if isinstance(t, RouterTrace)]
    families = sorted(set(t.task_tag for t in traces))
    if len(families) < 2:
        raise StatisticsUndefinedError(
            f"Router statistics need at least two traced families, got {families}"
        )

    labels, profiles = [], []
    for trace in sorted(traces, key=lambda t: t.task_tag):
        for row in trace.sample_profiles:
            labels.append(trace.task_tag)
            profiles.append(row)
    labels = np.array(labels)
    profiles = np.array(profiles, dtype=np.float64)

    vectors = profiles - profiles.mean(axis=0) if center_profiles else profiles
    similarity = cosine_similarity(vectors)
    upper = np.triu(np.ones_like(similarity, dtype=bool), k=1)
    same = labels[:, None] == labels[None, :]
    intra_pairs = similarity[upper & same]
    inter_pairs = similarity[upper & ~same]
    if intra_pairs.size == 0:
        raise StatisticsUndefinedError(
            "Every family holds a single profile, intra-family similarity is "
            "undefined"
        )

    analysis = RouterAnalysis(
        family_profiles={
            f: profiles[labels == f].mean(axis=0) for f in families
        },
        intra=float(intra_pairs.mean()),
        inter=float(inter_pairs.mean()),
        scatter=scatter_coordinates(labels, profiles),
    )
    log.info(
        f"Router profiles: intra-family similarity {analysis.intra:.4f}, "
        f"inter-family similarity {analysis.inter:.4f}"
    )
    return analysis


def scatter_coordinates(labels, profiles: np.ndarray) -> pd.DataFrame:
    """
    Coordinates of every per-sample profile in the planes of consecutive head
    pairs (0, 1), (1, 2), ...

    A single-head profile has no pair and yields an empty table.
    """
    n_heads = profiles.shape[1]
    sample_index = {}
    rows = []
    for label, profile in zip(labels, profiles):
        index = sample_index.get(label, 0)
        sample_index[label] = index + 1
        for i in range(n_heads - 1):
            rows.append(
                {
                    "family": str(label),
                    "sample_index": index,
                    "pair": f"h{i}-h{i + 1}",
                    "head_x": i,
                    "head_y": i + 1,
                    "x": float(profile[i]),
                    "y": float(profile[i + 1]),
                }
            )
    return pd.DataFrame(
        rows,
        columns=["family", "sample_index", "pair", "head_x", "head_y", "x", "y"],
    )
