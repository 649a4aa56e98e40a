"""
Localization Audit Module
-------------------------
This module audits a localizer against the ground-truth first errors of a
ThoughtTask by building SRPO buffers and comparing where the reset landed
with where the seed actually went wrong.
It includes functionality for:
- Per-record localized vs true index, deviation and suffix-group Pass@G
- Correction rate by deviation, clean vs erroneous prefixes
- Two-group per-token signal summaries on records where both groups carry advantage
"""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd

from thought_rl.srpo import Split, ThoughtVariant, build_buffer, per_token_signal, rollout_signal_summary
from thought_rl.thought_mdp import Localizer, ThoughtPolicy, ThoughtTask

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ['record', 'fallback', 'true_index', 'localized_index', 'deviation', 'clean',
                  'pass_at_g', 'suffix_success_rate', 'both_active', 'g_base', 'g_shared_prefix']


@dataclass
class LocalizationAudit:
    records: pd.DataFrame
    by_deviation: pd.DataFrame
    token_signal: pd.DataFrame
    summary: Dict[str, float]


def _rate(frame: pd.DataFrame, column: str) -> float:
    return float(frame[column].mean()) if len(frame) else float('nan')


def localization_audit(task: ThoughtTask, policy: ThoughtPolicy, localizer: Localizer, num_records: int,
                       rng: np.random.Generator, g: int = 4, max_seed_attempts: int = 16) -> LocalizationAudit:
    """
    Build num_records SRPO (1x4) buffers with the given localizer and audit them

    A record is clean when the localized index is at or before the true
    first error. Records whose buffer fell back (no failing seed) are kept
    with fallback=1 and excluded from the aggregates.

    Args:
        task: ThoughtTask with ground-truth first errors
        policy: Policy to audit (not updated)
        localizer: Localizer under audit
        num_records: Number of buffers
        rng: Random stream
        g: Group size
        max_seed_attempts: Phase 1 draw budget

    Returns:
        LocalizationAudit
    """
    rows = []
    signal_frames = []
    for record in range(num_records):
        buffer = build_buffer(task, policy, g, ThoughtVariant.SRPO, Split.ONE_BY_FOUR, localizer,
                              max_seed_attempts, rng)
        if buffer.fallback_flag:
            rows.append({'record': record, 'fallback': 1})
            continue
        group = buffer.shared_prefix_groups[0]
        truth = task.first_error(group.seed)
        located = group.reset_index
        successes = np.array(group.rewards) > 0
        signal = rollout_signal_summary(buffer, policy)
        rows.append({
            'record': record,
            'fallback': 0,
            'true_index': truth,
            'localized_index': located,
            'deviation': located - truth,
            'clean': int(located <= truth),
            'pass_at_g': int(successes.any()),
            'suffix_success_rate': float(successes.mean()),
            'both_active': int(signal.both_active),
            'g_base': signal.g_base,
            'g_shared_prefix': signal.g_shared_prefix,
        })
        tokens = per_token_signal(buffer, policy)
        tokens.insert(0, 'record', record)
        signal_frames.append(tokens)

    records = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    valid = records[records['fallback'] == 0]
    by_deviation = (valid.groupby('deviation')
                    .agg(count=('record', 'size'), correction_rate=('pass_at_g', 'mean'))
                    .reset_index())
    both = valid[valid['both_active'] == 1]
    summary = {
        'records': float(len(records)),
        'fallbacks': float(len(records) - len(valid)),
        'exact_rate': _rate(valid.assign(exact=(valid['deviation'] == 0).astype(float)), 'exact'),
        'clean_pass_at_g': _rate(valid[valid['clean'] == 1], 'pass_at_g'),
        'erroneous_pass_at_g': _rate(valid[valid['clean'] == 0], 'pass_at_g'),
        'both_active_fraction': _rate(valid, 'both_active'),
        'shared_prefix_exceeds_fraction': _rate(
            both.assign(exceeds=(both['g_shared_prefix'] > both['g_base']).astype(float)), 'exceeds'),
        'mean_g_base': _rate(both, 'g_base'),
        'mean_g_shared_prefix': _rate(both, 'g_shared_prefix'),
    }
    token_signal = pd.concat(signal_frames, ignore_index=True) if signal_frames else pd.DataFrame(
        columns=['record', 'group', 'kind', 'rollout', 'step', 'masked', 'g', 'advantage', 'active_tokens'])
    logger.debug(f"audit of {num_records} records: clean Pass@G={summary['clean_pass_at_g']:.3f}, "
                 f"erroneous Pass@G={summary['erroneous_pass_at_g']:.3f}")
    return LocalizationAudit(records=records, by_deviation=by_deviation, token_signal=token_signal, summary=summary)
