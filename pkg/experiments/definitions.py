"""
Experiment Definitions
----------------------
This module declares the named experiments of the lab.
It includes functionality for:
- Default generator/algorithm parameters and acceptance thresholds per experiment
- Parameter validation against the underlying module preconditions
- The per-replicate computation, aggregation, criteria and charts

Each experiment is a class; REGISTRY maps experiment names to instances.
"""

import math
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import ttest_rel

from analysis.constructions import (GadgetSpec, RandomMdpSpec, gadget_estimator_moments, gadget_mdp,
                                    random_mdp)
from analysis.cpi_engine import (CpiConfig, Variant, advantage_terms, caro_improvement_floor,
                                 estimate_from_samples, rr_improvement_floor, run_cpi)
from analysis.exact_oracle import (bound_slacks, compute_values, greedy_policy, improvable_stats,
                                   policy_advantage, visitation)
from analysis.sampling import credit_samples, reset_samples
from models.errors import ConfigValidationError, LabError
from models.policies import Policy, credit_greedy
from thought_rl.audit import RECORD_COLUMNS, localization_audit
from thought_rl.srpo import Split, ThoughtVariant, TrainingSettings, train_thought_policy
from thought_rl.thought_mdp import Localizer, ThoughtPolicy, ThoughtTask
from utils import report
from utils.rng import child_stream

logger = logging.getLogger(__name__)

CRITERIA_COLUMNS = ['criterion', 'value', 'comparison', 'threshold', 'passed']


def criterion(name: str, value: float, comparison: str, threshold: float) -> Dict[str, Any]:
    """One criteria row; NaN values fail"""
    value = float(value)
    checks = {
        '>=': value >= threshold,
        '<=': value <= threshold,
        '>': value > threshold,
        '<': value < threshold,
    }
    passed = bool(not math.isnan(value) and checks[comparison])
    return {'criterion': name, 'value': value, 'comparison': comparison, 'threshold': float(threshold),
            'passed': passed}


class Experiment:
    """Base class of a named experiment"""
    name = ''
    anchor = ''
    # artifact file -> the result it reproduces
    artifact_anchors: Dict[str, str] = {}
    default_replicates = 1
    generator_defaults: Dict[str, Any] = {}
    algorithm_defaults: Dict[str, Any] = {}
    threshold_defaults: Dict[str, float] = {}
    tables: Dict[str, List[str]] = {}

    def validate(self, generator: Dict[str, Any], algorithm: Dict[str, Any]) -> None:
        """Raise ConfigValidationError if the parameters violate a precondition"""
        try:
            self.prepare(generator, algorithm)
        except (LabError, ValueError, TypeError, KeyError) as e:
            raise ConfigValidationError(f"{self.name}: invalid parameters: {str(e)}") from e

    def prepare(self, generator: Dict[str, Any], algorithm: Dict[str, Any]) -> Any:
        raise NotImplementedError

    def replicate(self, context: Any, replicate: int, rng: np.random.Generator) -> Dict[str, List[Dict[str, Any]]]:
        raise NotImplementedError

    def aggregate(self, tables: Dict[str, pd.DataFrame], context: Any) -> pd.DataFrame:
        raise NotImplementedError

    def criteria(self, aggregate: pd.DataFrame, tables: Dict[str, pd.DataFrame], context: Any,
                 thresholds: Dict[str, float]) -> pd.DataFrame:
        raise NotImplementedError

    def plots(self, aggregate: pd.DataFrame, tables: Dict[str, pd.DataFrame], context: Any,
              out_dir: str) -> List[str]:
        return []


def _gadget_spec(generator: Dict[str, Any]) -> GadgetSpec:
    return GadgetSpec(num_actions=int(generator['num_actions']), r_max=float(generator['r_max']),
                      tau=float(generator['tau']), p=float(generator['p']),
                      epsilon=None if generator['epsilon'] is None else float(generator['epsilon']))


GADGET_DEFAULTS = {'num_actions': 4, 'r_max': 1.0, 'tau': 0.25, 'p': 0.1, 'epsilon': 0.001}


@dataclass
class TightnessContext:
    spec: GadgetSpec
    mdp: Any
    policy: Policy
    greedy: Policy
    moments: Any
    n_grid: List[int]
    default_q: float


class TightnessExperiment(Experiment):
    """Probability that the random-reset estimate is non-positive on the gadget"""
    name = 'tightness'
    anchor = 'Anti-concentration of the random-reset advantage estimator on the single-step gadget'
    artifact_anchors = {
        'tightness.svg': 'Tightness of the random-reset estimator: Pr(A_hat <= 0) vs n on the gadget construction, '
                         'against the anti-concentration floor',
        'aggregate.csv': 'Tightness of the random-reset estimator: exact mean, variance and regime limit n_max',
        'replicates.csv': 'Gadget construction: random-reset estimates per replicate and n',
    }
    default_replicates = 5000
    generator_defaults = dict(GADGET_DEFAULTS)
    algorithm_defaults = {'n_grid': None, 'grid_points': 6, 'default_q': 0.0}
    threshold_defaults = {'prob_nonpositive_min': 0.15}
    tables = {'replicates': ['replicate', 'n', 'a_hat', 'a_hat_plugin', 'nonpositive', 'nonpositive_plugin']}

    def prepare(self, generator, algorithm) -> TightnessContext:
        spec = _gadget_spec(generator)
        mdp, policy = gadget_mdp(spec)
        moments = gadget_estimator_moments(spec)
        if algorithm['n_grid']:
            n_grid = sorted({int(n) for n in algorithm['n_grid']})
        else:
            points = int(algorithm['grid_points'])
            n_grid = sorted({max(1, moments.n_max // 2 ** k) for k in range(points)})
        if n_grid[0] < 1:
            raise ConfigValidationError("tightness n_grid entries must be >= 1")
        return TightnessContext(spec, mdp, policy, greedy_policy(mdp, policy), moments, n_grid,
                                float(algorithm['default_q']))

    def replicate(self, context: TightnessContext, replicate, rng):
        batch = reset_samples(context.mdp, context.policy, rng, max(context.n_grid))
        rows = []
        for n in context.n_grid:
            prefix = batch.prefix(n)
            a_hat = float(advantage_terms(prefix, context.greedy, context.policy).mean())
            _, _, terms = estimate_from_samples(prefix, context.policy, context.default_q)
            a_plugin = float(terms.mean())
            rows.append({'n': n, 'a_hat': a_hat, 'a_hat_plugin': a_plugin,
                         'nonpositive': int(a_hat <= 0), 'nonpositive_plugin': int(a_plugin <= 0)})
        return {'replicates': rows}

    def aggregate(self, tables, context: TightnessContext):
        df = tables['replicates']
        rows = []
        for n in context.n_grid:
            sub = df[df['n'] == n]
            count = len(sub)
            prob = float(sub['nonpositive'].mean()) if count else float('nan')
            rows.append({
                'n': n,
                'replicates': count,
                'prob_nonpositive': prob,
                'se': math.sqrt(prob * (1 - prob) / count) if count else float('nan'),
                'prob_nonpositive_plugin': float(sub['nonpositive_plugin'].mean()) if count else float('nan'),
                'mean_a_hat': float(sub['a_hat'].mean()) if count else float('nan'),
                'exact_mean': context.moments.mean,
                'variance': context.moments.variance,
                'anti_concentration_floor': context.moments.anti_concentration_floor(n),
                'n_max': context.moments.n_max,
                'within_regime': int(n <= context.moments.n_max),
            })
        return pd.DataFrame(rows)

    def criteria(self, aggregate, tables, context, thresholds):
        threshold = thresholds['prob_nonpositive_min']
        rows = [criterion(f"Pr(A_hat <= 0) at n={int(r['n'])}", r['prob_nonpositive'], '>=', threshold)
                for _, r in aggregate[aggregate['within_regime'] == 1].iterrows()]
        return pd.DataFrame(rows, columns=CRITERIA_COLUMNS)

    def plots(self, aggregate, tables, context, out_dir):
        curve = aggregate.rename(columns={'anti_concentration_floor': 'reference'})
        path = report.line_chart(aggregate, 'n', 'prob_nonpositive', os.path.join(out_dir, 'tightness.svg'),
                                 'Random-reset estimate non-positive', xlabel='samples n',
                                 ylabel='Pr(A_hat <= 0)', logx=True, reference_curve=curve,
                                 reference={'threshold': 0.15})
        return [path] if path else []


@dataclass
class SeparationContext:
    specs: List[RandomMdpSpec]
    tau: float
    grids: Dict[Variant, List[int]]
    success_fraction: float
    default_q: float
    use_exact_visitation: bool


def geometric_grid(n_min: int, ratio: float, n_max: int) -> List[int]:
    """Rounded geometric grid n_min, n_min*ratio, ... capped at n_max"""
    if n_min < 1 or ratio <= 1 or n_max < n_min:
        raise ConfigValidationError("grid needs n_min >= 1, ratio > 1 and n_max >= n_min")
    grid, value = [], float(n_min)
    while round(value) <= n_max:
        grid.append(int(round(value)))
        value *= ratio
    return sorted(set(grid))


def stable_crossing(ns: Sequence[int], rates: Sequence[float], level: float) -> float:
    """Smallest n at which the rate reaches level and stays there for every larger n; NaN if none"""
    n_star = float('nan')
    for n, rate in sorted(zip(ns, rates), reverse=True):
        if rate >= level:
            n_star = float(n)
        else:
            break
    return n_star


def first_crossing(ns: Sequence[int], rates: Sequence[float], level: float) -> float:
    """Smallest n at which the rate reaches level, ignoring later dips; NaN if none"""
    for n, rate in sorted(zip(ns, rates)):
        if rate >= level:
            return float(n)
    return float('nan')


class SeparationExperiment(Experiment):
    """Samples needed to certify half the target advantage, across coverage levels"""
    name = 'separation'
    anchor = 'Sample-complexity scaling of random resets vs credit resets with coverage'
    artifact_anchors = {
        'separation_nstar.svg': 'Separation scaling table: n* of CPI-RR (about 1/p^2) vs CPI-CARO (flat) '
                                'against coverage p',
        'separation_success.svg': 'Separation scaling table: certification rate by n per variant and coverage',
        'aggregate.csv': 'Separation scaling table: success rate per variant, coverage and n',
        'replicates.csv': 'Separation scaling table: advantage estimates per replicate',
    }
    default_replicates = 200
    generator_defaults = {'num_states': 16, 'num_actions': 4, 'horizon': 1, 'r_max': 1.0, 'tau': 0.2,
                          'off_set_gap': 0.001, 'coverages': [0.5, 0.25, 0.125],
                          'coverage_tolerance': 0.02, 'kernel_concentration': 1.0}
    algorithm_defaults = {'n_min': 16, 'grid_ratio': math.sqrt(2.0), 'n_max_rr': 65536, 'n_max_caro': 8192,
                          'success_fraction': 0.9, 'default_q': 0.0, 'use_exact_visitation': False}
    threshold_defaults = {'rr_slope_min': -2.6, 'rr_slope_max': -1.4, 'caro_ratio_max': 2.0}
    tables = {'replicates': ['replicate', 'coverage_target', 'realized_p', 'variant', 'n', 'a_hat', 'target',
                             'success', 'trials']}

    def prepare(self, generator, algorithm) -> SeparationContext:
        specs = [RandomMdpSpec(num_states=int(generator['num_states']), num_actions=int(generator['num_actions']),
                               horizon=int(generator['horizon']), r_max=float(generator['r_max']),
                               kernel_concentration=float(generator['kernel_concentration']),
                               target_coverage=float(c), tau=float(generator['tau']),
                               off_set_gap=float(generator['off_set_gap']),
                               coverage_tolerance=float(generator['coverage_tolerance']))
                 for c in generator['coverages']]
        if not specs:
            raise ConfigValidationError("separation needs at least one coverage level")
        grids = {
            Variant.RR: geometric_grid(int(algorithm['n_min']), float(algorithm['grid_ratio']),
                                       int(algorithm['n_max_rr'])),
            Variant.CARO: geometric_grid(int(algorithm['n_min']), float(algorithm['grid_ratio']),
                                         int(algorithm['n_max_caro'])),
        }
        fraction = float(algorithm['success_fraction'])
        if not 0 < fraction <= 1:
            raise ConfigValidationError(f"success_fraction must lie in (0, 1], got {fraction}")
        return SeparationContext(specs, float(generator['tau']), grids, fraction,
                                 float(algorithm['default_q']), bool(algorithm['use_exact_visitation']))

    def replicate(self, context: SeparationContext, replicate, rng):
        rows = []
        for spec in context.specs:
            result = random_mdp(spec, rng)
            mdp, pi = result.mdp, result.base_policy
            stats = improvable_stats(mdp, pi, context.tau)
            for variant, grid in context.grids.items():
                if variant == Variant.CARO:
                    batch = credit_samples(mdp, pi, stats, rng, max(grid),
                                           use_exact_visitation=context.use_exact_visitation)
                    target = context.tau
                else:
                    batch = reset_samples(mdp, pi, rng, max(grid), context.use_exact_visitation)
                    target = context.tau * stats.p
                for n in grid:
                    prefix = batch.prefix(n)
                    _, _, terms = estimate_from_samples(prefix, pi, context.default_q)
                    a_hat = float(terms.mean())
                    rows.append({'coverage_target': spec.target_coverage, 'realized_p': stats.p,
                                 'variant': variant.value, 'n': n, 'a_hat': a_hat, 'target': target,
                                 'success': int(a_hat >= target / 2), 'trials': prefix.trials})
        return {'replicates': rows}

    def aggregate(self, tables, context: SeparationContext):
        df = tables['replicates']
        columns = ['variant', 'coverage_target', 'n', 'replicates', 'success_rate', 'mean_a_hat',
                   'mean_realized_p', 'mean_trials', 'n_star', 'n_first']
        if not len(df):
            return pd.DataFrame(columns=columns)
        grouped = (df.groupby(['variant', 'coverage_target', 'n'])
                   .agg(replicates=('replicate', 'size'), success_rate=('success', 'mean'),
                        mean_a_hat=('a_hat', 'mean'), mean_realized_p=('realized_p', 'mean'),
                        mean_trials=('trials', 'mean'))
                   .reset_index())
        n_stars = {key: stable_crossing(sub['n'], sub['success_rate'], context.success_fraction)
                   for key, sub in grouped.groupby(['variant', 'coverage_target'])}
        n_firsts = {key: first_crossing(sub['n'], sub['success_rate'], context.success_fraction)
                    for key, sub in grouped.groupby(['variant', 'coverage_target'])}
        keys = list(zip(grouped['variant'], grouped['coverage_target']))
        grouped['n_star'] = [n_stars[key] for key in keys]
        grouped['n_first'] = [n_firsts[key] for key in keys]
        return grouped[columns].sort_values(['variant', 'coverage_target', 'n'],
                                            ascending=[False, False, True]).reset_index(drop=True)

    @staticmethod
    def n_star_table(aggregate: pd.DataFrame) -> pd.DataFrame:
        if not len(aggregate):
            return pd.DataFrame(columns=['variant', 'coverage_target', 'p', 'n_star', 'n_first'])
        return (aggregate.groupby(['variant', 'coverage_target'])
                .agg(p=('mean_realized_p', 'mean'), n_star=('n_star', 'first'), n_first=('n_first', 'first'))
                .reset_index())

    def criteria(self, aggregate, tables, context, thresholds):
        table = self.n_star_table(aggregate)
        rr = table[table['variant'] == Variant.RR.value].sort_values('p')
        caro = table[table['variant'] == Variant.CARO.value]
        rows = []
        rr_defined = len(rr) == len(context.specs) and rr['n_star'].notna().all()
        rows.append(criterion('RR n* (stable crossing) defined at every coverage', float(rr_defined), '>=', 1.0))
        slope = float('nan')
        if rr_defined and len(rr) >= 2:
            slope = float(np.polyfit(np.log(rr['p']), np.log(rr['n_star']), 1)[0])
        rows.append(criterion('RR log-log slope of stable-crossing n* vs p (lower)', slope, '>=',
                              thresholds['rr_slope_min']))
        rows.append(criterion('RR log-log slope of stable-crossing n* vs p (upper)', slope, '<=',
                              thresholds['rr_slope_max']))
        monotone = rr_defined and bool(np.all(np.diff(rr['n_star'].to_numpy()) < 0))
        rows.append(criterion('RR stable-crossing n* increases as p decreases', float(monotone), '>=', 1.0))
        caro_defined = len(caro) == len(context.specs) and caro['n_star'].notna().all()
        ratio = float(caro['n_star'].max() / caro['n_star'].min()) if caro_defined else float('nan')
        rows.append(criterion('CARO stable-crossing n* max/min across coverages', ratio, '<',
                              thresholds['caro_ratio_max']))
        return pd.DataFrame(rows, columns=CRITERIA_COLUMNS)

    def plots(self, aggregate, tables, context, out_dir):
        paths = [
            report.line_chart(self.n_star_table(aggregate).dropna(), 'p', 'n_star',
                              os.path.join(out_dir, 'separation_nstar.svg'),
                              'Samples to certify half the target', hue='variant',
                              xlabel='coverage p', ylabel='n*', logx=True, logy=True),
            report.line_chart(aggregate.assign(series=aggregate['variant'] + ' p=' + aggregate['coverage_target'].astype(str)),
                              'n', 'success_rate', os.path.join(out_dir, 'separation_success.svg'),
                              'Certification rate by sample size', hue='series', xlabel='samples n',
                              logx=True, reference={'success level': context.success_fraction}),
        ]
        return [p for p in paths if p]


@dataclass
class BoundsContext:
    state_range: Sequence[int]
    action_range: Sequence[int]
    horizon_range: Sequence[int]
    tau_fraction: float
    kernel_concentration: float
    alphas: List[float]


class BoundsExperiment(Experiment):
    """Exact identities and improvement bounds on random MDPs"""
    name = 'bounds'
    anchor = 'Classical and credit-aware conservative improvement bounds and the advantage decomposition'
    artifact_anchors = {
        'bounds.svg': 'Classical CPI improvement bound, credit-aware CPI bound and credit-aware simulation '
                      'TV bound: minimum slack per alpha',
        'aggregate.csv': 'Improvement bounds: minimum slack per alpha over random MDPs',
        'replicates.csv': 'Advantage decomposition identity, zero-mean advantage and greedy dominance per MDP',
    }
    default_replicates = 100
    generator_defaults = {'min_states': 2, 'max_states': 8, 'min_actions': 2, 'max_actions': 4,
                          'min_horizon': 1, 'max_horizon': 6, 'tau_fraction': 0.5, 'kernel_concentration': 1.0}
    algorithm_defaults = {'alpha_step': 0.05}
    threshold_defaults = {'slack_tolerance': 1e-12, 'identity_tolerance': 1e-10}
    tables = {'replicates': ['replicate', 'num_states', 'num_actions', 'horizon', 'tau', 'p_pi', 'alpha',
                             'classical_slack', 'credit_slack', 'tv_slack', 'classical_slack_exact',
                             'credit_slack_exact', 'decomposition_error', 'zero_mean_error', 'dominance_ok']}

    def prepare(self, generator, algorithm) -> BoundsContext:
        ranges = []
        for key in ('states', 'actions', 'horizon'):
            low, high = int(generator[f'min_{key}']), int(generator[f'max_{key}'])
            if not 1 <= low <= high:
                raise ConfigValidationError(f"need 1 <= min_{key} <= max_{key}")
            ranges.append((low, high))
        if ranges[1][0] < 2:
            raise ConfigValidationError("bounds needs at least 2 actions")
        fraction = float(generator['tau_fraction'])
        if not 0 < fraction <= 1:
            raise ConfigValidationError(f"tau_fraction must lie in (0, 1], got {fraction}")
        step = float(algorithm['alpha_step'])
        if not 0 < step <= 1:
            raise ConfigValidationError(f"alpha_step must lie in (0, 1], got {step}")
        count = int(round(1.0 / step))
        alphas = [round(i * step, 12) for i in range(count + 1) if i * step <= 1.0 + 1e-12]
        return BoundsContext(ranges[0], ranges[1], ranges[2], fraction,
                             float(generator['kernel_concentration']), alphas)

    def replicate(self, context: BoundsContext, replicate, rng):
        spec = RandomMdpSpec(num_states=int(rng.integers(context.state_range[0], context.state_range[1] + 1)),
                             num_actions=int(rng.integers(context.action_range[0], context.action_range[1] + 1)),
                             horizon=int(rng.integers(context.horizon_range[0], context.horizon_range[1] + 1)),
                             kernel_concentration=context.kernel_concentration)
        result = random_mdp(spec, rng)
        mdp, pi = result.mdp, result.base_policy
        values = compute_values(mdp, pi)
        visits = visitation(mdp, pi)
        tau = max(context.tau_fraction * float(values.a.max()), 1e-9)

        query = Policy.random(rng, mdp.horizon, mdp.num_states, mdp.num_actions)
        split = improvable_stats(mdp, pi, tau, query=query, values=values, visits=visits)
        total = policy_advantage(mdp, pi, query, values, visits)
        decomposition_error = abs(split.p * split.adv_on + (1 - split.p) * split.adv_off - total)
        zero_mean_error = float(np.abs(np.einsum('hxy,hxy->hx', pi.probs, values.a)).max())

        pi_plus = greedy_policy(mdp, pi, values)
        stats = improvable_stats(mdp, pi, tau, values=values, visits=visits)
        adv_plus = policy_advantage(mdp, pi, pi_plus, values, visits)
        adv_credit = policy_advantage(mdp, pi, credit_greedy(pi, pi_plus, stats), values, visits)
        dominance_ok = adv_plus >= adv_credit - 1e-12 and (stats.p <= 0 or adv_credit >= tau * stats.p - 1e-12)

        slacks = bound_slacks(mdp, pi, tau, context.alphas)
        rows = []
        for _, r in slacks.iterrows():
            rows.append({'num_states': mdp.num_states, 'num_actions': mdp.num_actions, 'horizon': mdp.horizon,
                         'tau': tau, 'p_pi': r['p_pi'], 'alpha': r['alpha'],
                         'classical_slack': r['classical_slack'], 'credit_slack': r['credit_slack'],
                         'tv_slack': r['tv_slack'], 'classical_slack_exact': r['classical_slack_exact'],
                         'credit_slack_exact': r['credit_slack_exact'],
                         'decomposition_error': decomposition_error, 'zero_mean_error': zero_mean_error,
                         'dominance_ok': int(dominance_ok)})
        return {'replicates': rows}

    def aggregate(self, tables, context):
        df = tables['replicates']
        columns = ['alpha', 'mdps', 'min_classical_slack', 'min_credit_slack', 'min_tv_slack',
                   'min_classical_slack_exact', 'min_credit_slack_exact', 'max_decomposition_error',
                   'max_zero_mean_error', 'dominance_rate']
        if not len(df):
            return pd.DataFrame(columns=columns)
        grouped = (df.groupby('alpha')
                   .agg(mdps=('replicate', 'nunique'), min_classical_slack=('classical_slack', 'min'),
                        min_credit_slack=('credit_slack', 'min'), min_tv_slack=('tv_slack', 'min'),
                        min_classical_slack_exact=('classical_slack_exact', 'min'),
                        min_credit_slack_exact=('credit_slack_exact', 'min'),
                        max_decomposition_error=('decomposition_error', 'max'),
                        max_zero_mean_error=('zero_mean_error', 'max'),
                        dominance_rate=('dominance_ok', 'mean'))
                   .reset_index())
        return grouped[columns]

    def criteria(self, aggregate, tables, context, thresholds):
        empty = not len(aggregate)
        low = lambda column: float('nan') if empty else float(aggregate[column].min())
        high = lambda column: float('nan') if empty else float(aggregate[column].max())
        slack_tol, identity_tol = thresholds['slack_tolerance'], thresholds['identity_tolerance']
        rows = [
            criterion('classical bound min slack', low('min_classical_slack'), '>=', -slack_tol),
            criterion('credit-aware bound min slack', low('min_credit_slack'), '>=', -slack_tol),
            criterion('state-distribution TV bound min slack', low('min_tv_slack'), '>=', -slack_tol),
            criterion('advantage decomposition max error', high('max_decomposition_error'), '<=', identity_tol),
            criterion('zero-mean advantage max error', high('max_zero_mean_error'), '<=', identity_tol),
            criterion('greedy dominance rate', low('dominance_rate'), '>=', 1.0),
        ]
        return pd.DataFrame(rows, columns=CRITERIA_COLUMNS)

    def plots(self, aggregate, tables, context, out_dir):
        long = aggregate.melt(id_vars='alpha', value_vars=['min_classical_slack', 'min_credit_slack', 'min_tv_slack'],
                              var_name='bound', value_name='min_slack')
        path = report.line_chart(long, 'alpha', 'min_slack', os.path.join(out_dir, 'bounds.svg'),
                                 'Minimum slack over random MDPs', hue='bound', reference={'zero': 0.0})
        return [path] if path else []


@dataclass
class CompareContext:
    spec: GadgetSpec
    mdp: Any
    policy: Policy
    configs: Dict[Variant, CpiConfig]
    iterations: int
    p: float


class CpiCompareExperiment(Experiment):
    """Paired per-step improvement of the two CPI variants on the gadget"""
    name = 'cpi-compare'
    anchor = 'Per-step improvement of random-reset vs credit-reset CPI at matched sample size'
    artifact_anchors = {
        'cpi_compare.svg': 'CPI with random resets vs credit-assigned resets: exact improvement per iteration',
        'aggregate.csv': 'CPI per-iteration improvement: observed means against the improvement floors',
        'replicates.csv': 'CPI step reports per paired replicate',
    }
    default_replicates = 500
    generator_defaults = dict(GADGET_DEFAULTS)
    algorithm_defaults = {'n': 2000, 'default_q': 0.0, 'iterations': 1, 'use_exact_visitation': False}
    threshold_defaults = {'significance': 0.01, 'caro_positive_fraction_min': 0.95}
    tables = {'replicates': ['replicate', 'variant', 'iteration', 'a_hat', 'alpha_hat', 'j_before', 'j_after',
                             'improvement', 'samples_used', 'trials_used', 'simulated_steps', 'p_pi', 'no_op',
                             'no_op_reason', 'y_variance', 'y_abs_max', 'greedy_transfer_slack']}

    def prepare(self, generator, algorithm) -> CompareContext:
        spec = _gadget_spec(generator)
        mdp, policy = gadget_mdp(spec)
        iterations = int(algorithm['iterations'])
        if iterations < 1:
            raise ConfigValidationError("cpi-compare needs at least one iteration")
        configs = {v: CpiConfig(variant=v, tau=spec.tau, n=int(algorithm['n']),
                                default_q=float(algorithm['default_q']),
                                use_exact_visitation=bool(algorithm['use_exact_visitation']))
                   for v in (Variant.RR, Variant.CARO)}
        return CompareContext(spec, mdp, policy, configs, iterations, spec.p)

    def replicate(self, context: CompareContext, replicate, rng):
        rows = []
        for variant, config in context.configs.items():
            trace = run_cpi(context.mdp, context.policy, context.iterations, config, child_stream(rng, variant.value))
            for iteration, step in enumerate(trace, start=1):
                rows.append({'iteration': iteration, **step.to_row()})
        return {'replicates': rows}

    def _totals(self, df: pd.DataFrame) -> pd.DataFrame:
        return df.groupby(['replicate', 'variant'])['improvement'].sum().unstack('variant')

    def aggregate(self, tables, context: CompareContext):
        df = tables['replicates']
        H, R, K = context.mdp.horizon, context.mdp.r_max, context.mdp.num_actions
        floors = {Variant.RR.value: rr_improvement_floor(context.spec.tau, context.p, H, R),
                  Variant.CARO.value: caro_improvement_floor(context.spec.tau, context.p, H, R)}
        totals = self._totals(df) if len(df) else pd.DataFrame()
        rows = []
        for variant in (Variant.RR.value, Variant.CARO.value):
            sub = df[df['variant'] == variant]
            total = totals[variant] if variant in totals else pd.Series(dtype=float)
            count = len(total)
            rows.append({
                'variant': variant,
                'replicates': count,
                'mean_improvement': float(total.mean()) if count else float('nan'),
                'se_improvement': float(total.std(ddof=1) / math.sqrt(count)) if count > 1 else float('nan'),
                'positive_fraction': float((total > 0).mean()) if count else float('nan'),
                'no_op_rate': float(sub['no_op'].mean()) if len(sub) else float('nan'),
                'mean_a_hat': float(sub['a_hat'].mean()) if len(sub) else float('nan'),
                'mean_alpha_hat': float(sub['alpha_hat'].mean()) if len(sub) else float('nan'),
                'mean_trials': float(sub['trials_used'].mean()) if len(sub) else float('nan'),
                'improvement_floor': floors[variant],
                'max_y_variance': float(sub['y_variance'].max()) if len(sub) else float('nan'),
                'y_variance_bound': 2.0 * K * H ** 2 * R ** 2,
                'max_y_abs': float(sub['y_abs_max'].max()) if len(sub) else float('nan'),
                'y_abs_bound': K * H * R,
                'min_greedy_transfer_slack': float(sub['greedy_transfer_slack'].min()) if len(sub) else float('nan'),
            })
        return pd.DataFrame(rows)

    def criteria(self, aggregate, tables, context, thresholds):
        df = tables['replicates']
        p_value = float('nan')
        if len(df):
            totals = self._totals(df).dropna()
            if len(totals) > 1:
                p_value = float(ttest_rel(totals[Variant.CARO.value], totals[Variant.RR.value],
                                          alternative='greater').pvalue)
        caro = aggregate[aggregate['variant'] == Variant.CARO.value].iloc[0]
        rows = [
            criterion('paired one-sided p-value CARO > RR', p_value, '<', thresholds['significance']),
            criterion('CARO mean improvement', caro['mean_improvement'], '>', 0.0),
            criterion('CARO positive-improvement fraction', caro['positive_fraction'], '>=',
                      thresholds['caro_positive_fraction_min']),
        ]
        for _, r in aggregate.iterrows():
            rows.append(criterion(f"{r['variant']} max Var(Y) within bound",
                                  r['max_y_variance'] - r['y_variance_bound'], '<=', 0.0))
            rows.append(criterion(f"{r['variant']} max |Y| within bound", r['max_y_abs'] - r['y_abs_bound'], '<=', 1e-12))
            rows.append(criterion(f"{r['variant']} greedy transfer min slack", r['min_greedy_transfer_slack'],
                                  '>=', -1e-12))
        return pd.DataFrame(rows, columns=CRITERIA_COLUMNS)

    def plots(self, aggregate, tables, context, out_dir):
        df = tables['replicates']
        path = report.box_chart(df, 'variant', 'improvement', os.path.join(out_dir, 'cpi_compare.svg'),
                                'Exact improvement per step', ylabel='J(pi_out) - J(pi)')
        return [path] if path else []


def _task(generator: Dict[str, Any]) -> ThoughtTask:
    traps = {int(step): int(safe) for step, safe in generator['traps'].items()}
    return ThoughtTask(branching=int(generator['branching']), depth=int(generator['depth']), traps=traps)


def _localizer(params: Dict[str, Any]) -> Localizer:
    return Localizer(mode=params.get('mode', 'oracle'), p_exact=float(params.get('p_exact', 0.5)),
                     max_offset=int(params.get('max_offset', 1)))


TASK_DEFAULTS = {'branching': 3, 'depth': 4, 'traps': {'3': 1}}


@dataclass
class SrpoContext:
    task: ThoughtTask
    variants: List[ThoughtVariant]
    settings: TrainingSettings
    temperature: float
    localizer: Localizer
    smoothing_window: int


class SrpoToyExperiment(Experiment):
    """Training curves of localized, random and no-reset group policy optimization"""
    name = 'srpo-toy'
    anchor = 'Learning curves on the trap-step task for localized reset, random reset and no reset'
    artifact_anchors = {
        'srpo_toy.svg': 'Two-group buffer construction: success of SRPO vs RRPO vs GRPO during training',
        'aggregate.csv': 'Two-group buffer construction: mean success per variant and update',
        'replicates.csv': 'Two-group buffer construction: learning curve per seed and variant',
    }
    default_replicates = 9
    generator_defaults = dict(TASK_DEFAULTS)
    algorithm_defaults = {'variants': ['SRPO', 'GRPO', 'RRPO'], 'g': 4, 'split': '1x4', 'learning_rate': 2.0,
                          'updates': 40, 'temperature': 1.0, 'max_seed_attempts': 16,
                          'localizer': {'mode': 'oracle', 'p_exact': 0.5, 'max_offset': 1},
                          'smoothing_window': 5}
    threshold_defaults = {'win_fraction_min': 2.0 / 3.0, 'smoothing_tolerance': 0.02}
    tables = {'replicates': ['replicate', 'variant', 'update', 'success', 'loss', 'fallback', 'degenerate_groups',
                             'reset_index', 'seed_attempts']}

    def prepare(self, generator, algorithm) -> SrpoContext:
        task = _task(generator)
        settings = TrainingSettings(g=int(algorithm['g']), split=Split(algorithm['split']),
                                    learning_rate=float(algorithm['learning_rate']),
                                    updates=int(algorithm['updates']),
                                    max_seed_attempts=int(algorithm['max_seed_attempts']))
        variants = [ThoughtVariant(v) for v in algorithm['variants']]
        ThoughtPolicy(task, temperature=float(algorithm['temperature']))
        return SrpoContext(task, variants, settings, float(algorithm['temperature']),
                           _localizer(algorithm['localizer']), int(algorithm['smoothing_window']))

    def replicate(self, context: SrpoContext, replicate, rng):
        rows = []
        for variant in context.variants:
            policy = ThoughtPolicy(context.task, temperature=context.temperature)
            curve = train_thought_policy(context.task, policy, variant, context.settings, context.localizer,
                                         child_stream(rng, variant.value))
            for record in curve.to_dict('records'):
                rows.append({'variant': variant.value, **record})
        return {'replicates': rows}

    def aggregate(self, tables, context):
        df = tables['replicates']
        columns = ['variant', 'update', 'runs', 'mean_success', 'se_success', 'smoothed_success']
        if not len(df):
            return pd.DataFrame(columns=columns)
        grouped = (df.groupby(['variant', 'update'])
                   .agg(runs=('replicate', 'nunique'), mean_success=('success', 'mean'),
                        sd_success=('success', 'std'))
                   .reset_index())
        grouped['se_success'] = grouped['sd_success'] / np.sqrt(grouped['runs'])
        grouped['smoothed_success'] = (grouped.groupby('variant')['mean_success']
                                       .transform(lambda s: s.rolling(context.smoothing_window, min_periods=1).mean()))
        return grouped[columns]

    def _finals(self, df: pd.DataFrame) -> pd.DataFrame:
        last = df[df['update'] == df['update'].max()]
        return last.pivot_table(index='replicate', columns='variant', values='success')

    def criteria(self, aggregate, tables, context, thresholds):
        df = tables['replicates']
        finals = self._finals(df) if len(df) else pd.DataFrame()
        rows = []
        for rival in (ThoughtVariant.GRPO.value, ThoughtVariant.RRPO.value):
            fraction = float('nan')
            if ThoughtVariant.SRPO.value in finals and rival in finals:
                fraction = float((finals[ThoughtVariant.SRPO.value] > finals[rival]).mean())
            rows.append(criterion(f"seeds where SRPO final success > {rival}", fraction, '>=',
                                  thresholds['win_fraction_min'] - 1e-12))
        curve = aggregate[aggregate['variant'] == ThoughtVariant.SRPO.value]['smoothed_success'].to_numpy()
        worst_drop = float(-np.diff(curve).min()) if len(curve) > 1 else float('nan')
        rows.append(criterion('SRPO smoothed success largest drop', worst_drop, '<=',
                              thresholds['smoothing_tolerance']))
        return pd.DataFrame(rows, columns=CRITERIA_COLUMNS)

    def plots(self, aggregate, tables, context, out_dir):
        path = report.line_chart(aggregate, 'update', 'mean_success', os.path.join(out_dir, 'srpo_toy.svg'),
                                 'Exact success probability during training', hue='variant',
                                 ylabel='success probability')
        return [path] if path else []


@dataclass
class AuditContext:
    task: ThoughtTask
    pretrain: TrainingSettings
    pretrain_variant: ThoughtVariant
    temperature: float
    localizer: Localizer
    num_records: int
    g: int
    max_seed_attempts: int


TOKEN_COLUMNS = ['replicate', 'record', 'group', 'kind', 'rollout', 'step', 'masked', 'g']


class LocalizationQualityExperiment(Experiment):
    """Localization audit of a partially trained policy"""
    name = 'localization-quality'
    anchor = 'Localization quality vs suffix correction rate and per-token gradient signal'
    artifact_anchors = {
        'localization.svg': 'Localization quality vs correction rate: suffix Pass@G by localization deviation',
        'aggregate.csv': 'Localization quality: Pass@G of clean vs erroneous prefixes',
        'replicates.csv': 'Localization audit records per seed',
        'token_signal.csv': 'Per-token gradient signal of base vs shared-prefix groups',
    }
    default_replicates = 9
    generator_defaults = dict(TASK_DEFAULTS)
    algorithm_defaults = {'pretrain_updates': 10, 'pretrain_variant': 'SRPO', 'g': 4, 'learning_rate': 2.0,
                          'temperature': 1.0, 'num_records': 100, 'max_seed_attempts': 16,
                          'localizer': {'mode': 'noisy', 'p_exact': 0.5, 'max_offset': 1}}
    threshold_defaults = {'shared_prefix_exceeds_min': 0.5}
    tables = {'replicates': ['replicate'] + RECORD_COLUMNS, 'token_signal': TOKEN_COLUMNS}

    def prepare(self, generator, algorithm) -> AuditContext:
        task = _task(generator)
        pretrain = TrainingSettings(g=int(algorithm['g']), split=Split.ONE_BY_FOUR,
                                    learning_rate=float(algorithm['learning_rate']),
                                    updates=int(algorithm['pretrain_updates']),
                                    max_seed_attempts=int(algorithm['max_seed_attempts']))
        records = int(algorithm['num_records'])
        if records < 1:
            raise ConfigValidationError("num_records must be >= 1")
        ThoughtPolicy(task, temperature=float(algorithm['temperature']))
        return AuditContext(task, pretrain, ThoughtVariant(algorithm['pretrain_variant']),
                            float(algorithm['temperature']), _localizer(algorithm['localizer']), records,
                            int(algorithm['g']), int(algorithm['max_seed_attempts']))

    def replicate(self, context: AuditContext, replicate, rng):
        policy = ThoughtPolicy(context.task, temperature=context.temperature)
        train_thought_policy(context.task, policy, context.pretrain_variant, context.pretrain, Localizer(),
                             child_stream(rng, 'pretrain'))
        audit = localization_audit(context.task, policy, context.localizer, context.num_records,
                                   child_stream(rng, 'audit'), g=context.g,
                                   max_seed_attempts=context.max_seed_attempts)
        tokens = audit.token_signal[TOKEN_COLUMNS[1:]]
        return {'replicates': audit.records.to_dict('records'), 'token_signal': tokens.to_dict('records')}

    def aggregate(self, tables, context):
        df = tables['replicates']
        columns = ['grouping', 'key', 'records', 'pass_at_g', 'mean_g_base', 'mean_g_shared_prefix']
        valid = df[df['fallback'] == 0] if len(df) else df
        rows = []
        if len(valid):
            for deviation, sub in valid.groupby('deviation'):
                rows.append({'grouping': 'deviation', 'key': str(int(deviation)), 'records': len(sub),
                             'pass_at_g': float(sub['pass_at_g'].mean())})
            for label, flag in (('clean', 1), ('erroneous', 0)):
                sub = valid[valid['clean'] == flag]
                rows.append({'grouping': 'prefix', 'key': label, 'records': len(sub),
                             'pass_at_g': float(sub['pass_at_g'].mean()) if len(sub) else float('nan')})
            both = valid[valid['both_active'] == 1]
            rows.append({'grouping': 'signal', 'key': 'both_active', 'records': len(both),
                         'pass_at_g': float('nan'),
                         'mean_g_base': float(both['g_base'].mean()) if len(both) else float('nan'),
                         'mean_g_shared_prefix': float(both['g_shared_prefix'].mean()) if len(both) else float('nan')})
        return pd.DataFrame(rows, columns=columns)

    def criteria(self, aggregate, tables, context, thresholds):
        df = tables['replicates']
        prefix = aggregate[aggregate['grouping'] == 'prefix'].set_index('key')['pass_at_g'] if len(aggregate) else {}
        gap = float('nan')
        if 'clean' in prefix and 'erroneous' in prefix:
            gap = float(prefix['clean'] - prefix['erroneous'])
        exceeds = float('nan')
        if len(df):
            both = df[(df['fallback'] == 0) & (df['both_active'] == 1)]
            if len(both):
                exceeds = float((both['g_shared_prefix'] > both['g_base']).mean())
        rows = [
            criterion('clean minus erroneous Pass@G', gap, '>', 0.0),
            criterion('fraction of two-group records with higher shared-prefix signal', exceeds, '>',
                      thresholds['shared_prefix_exceeds_min']),
        ]
        return pd.DataFrame(rows, columns=CRITERIA_COLUMNS)

    def plots(self, aggregate, tables, context, out_dir):
        by_deviation = aggregate[aggregate['grouping'] == 'deviation']
        path = report.bar_chart(by_deviation, 'key', 'pass_at_g', os.path.join(out_dir, 'localization.svg'),
                                'Suffix-group Pass@G by localization deviation', ylabel='Pass@G')
        return [path] if path else []


REGISTRY: Dict[str, Experiment] = {e.name: e for e in (
    TightnessExperiment(),
    SeparationExperiment(),
    BoundsExperiment(),
    CpiCompareExperiment(),
    SrpoToyExperiment(),
    LocalizationQualityExperiment(),
)}


def get_experiment(name: str) -> Experiment:
    if name not in REGISTRY:
        raise ConfigValidationError(f"unknown experiment '{name}'; choose one of {sorted(REGISTRY)}")
    return REGISTRY[name]
