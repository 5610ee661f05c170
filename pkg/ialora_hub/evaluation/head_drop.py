import numpy as np
import pandas as pd

from ..components.adapters import drop_heads, reset_heads
from .evaluate import evaluate, PRIMARY_METRIC

import logging

log = logging.getLogger(__name__)

NO_DROP = "none"


def _rows(result, dropped) -> list:
    rows = []
    for family, metrics in result.metrics.items():
        for metric, value in metrics.items():
            rows.append(
                {
                    "dropped_head": dropped,
                    "family": family,
                    "metric": metric,
                    "value": float(value),
                }
            )
    return rows


def head_drop_experiment(model, suite: list, n_heads: int = None) -> pd.DataFrame:
    """
    Evaluates the model with no head dropped and with every single head dropped

    The routing weight of the dropped head is set to zero in every adapted
    layer; the remaining weights are not renormalized. The drop mask of the
    model is restored afterwards, also when an evaluation fails.

    :param model: trained model
    :param list suite: evaluation samples
    :param int n_heads: number of heads, read from the model config if None
    :return: long table with columns dropped_head, family, metric, value
    :rtype: pd.DataFrame
    """
    if n_heads is None:
        n_heads = model.model_config.n_heads
    rows = []
    try:
        reset_heads(model)
        rows.extend(_rows(evaluate(model, suite), NO_DROP))
        for head in range(n_heads):
            drop_heads(model, {head})
            log.info(f"Evaluating with head {head} dropped")
            rows.extend(_rows(evaluate(model, suite), str(head)))
            reset_heads(model)
    finally:
        reset_heads(model)
    return pd.DataFrame(rows, columns=["dropped_head", "family", "metric", "value"])


def primary_drop_table(table: pd.DataFrame) -> pd.DataFrame:
    """
    The primary metric of every family per dropped head, one column per family
    """
    primary = table[
        [PRIMARY_METRIC[f] == m for f, m in zip(table["family"], table["metric"])]
    ]
    return primary.pivot(index="dropped_head", columns="family", values="value")


def head_drop_summary(table: pd.DataFrame, family_profiles: dict) -> pd.DataFrame:
    """
    Metric drop of every family when its max-weight and its min-weight head
    are removed

    :param pd.DataFrame table: result of :func:`head_drop_experiment`
    :param dict family_profiles: family -> mean router profile
    :return: one row per family with the heads, their drops, and whether the
        max-weight drop hurts at least as much as the min-weight drop
    :rtype: pd.DataFrame
    """
    wide = primary_drop_table(table)
    rows = []
    for family in wide.columns:
        if family not in family_profiles:
            continue
        profile = np.asarray(family_profiles[family])
        max_head = int(np.argmax(profile))
        min_head = int(np.argmin(profile))
        baseline = wide.loc[NO_DROP, family]
        max_drop = baseline - wide.loc[str(max_head), family]
        min_drop = baseline - wide.loc[str(min_head), family]
        worst = wide.drop(index=NO_DROP)[family].min()
        rows.append(
            {
                "family": family,
                "max_head": max_head,
                "min_head": min_head,
                "baseline": float(baseline),
                "max_drop": float(max_drop),
                "min_drop": float(min_drop),
                "max_hurts_more": bool(max_drop >= min_drop),
                "no_drop_not_worst": bool(baseline >= worst),
            }
        )
    return pd.DataFrame(rows)
