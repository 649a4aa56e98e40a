"""
Report Module
-------------
This module turns experiment tables into charts and summary documents.
It includes functionality for:
- Deterministic SVG line and box charts (matplotlib + seaborn)
- Artifact manifests with SHA-256 checksums and their verification
- The SUMMARY.md report over one or several experiment directories
"""

import os
import json
import hashlib
import logging
from typing import Any, Dict, List, Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd
import seaborn as sns

from models.errors import CorruptArtifactError

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
SUMMARY_NAME = 'SUMMARY.md'

# SVG output must not depend on the run
matplotlib.rcParams['svg.hashsalt'] = 'credit-lab'
sns.set_theme(style='whitegrid')


def _save(fig, save_path: str) -> str:
    os.makedirs(os.path.dirname(save_path) or '.', exist_ok=True)
    fig.tight_layout()
    fig.savefig(save_path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info(f"Chart written to {save_path}")
    return save_path


def line_chart(df: pd.DataFrame, x: str, y: str, save_path: str, title: str,
               hue: Optional[str] = None, xlabel: Optional[str] = None, ylabel: Optional[str] = None,
               logx: bool = False, logy: bool = False,
               reference: Optional[Dict[str, float]] = None,
               reference_curve: Optional[pd.DataFrame] = None) -> Optional[str]:
    """
    Generate a line chart from a table

    Args:
        df: Table to plot
        x: Column on the x axis
        y: Column on the y axis
        save_path: Path of the SVG file
        title: Chart title
        hue: Optional column splitting the lines
        xlabel: x axis label (defaults to x)
        ylabel: y axis label (defaults to y)
        logx: Log-scale x axis
        logy: Log-scale y axis
        reference: Optional label -> horizontal reference value
        reference_curve: Optional table with columns x and 'reference' drawn dashed

    Returns:
        Path to saved chart or None if failed
    """
    try:
        fig, ax = plt.subplots(figsize=(8, 5))
        if len(df):
            sns.lineplot(data=df, x=x, y=y, hue=hue, marker='o', ax=ax)
        if reference_curve is not None and len(reference_curve):
            ax.plot(reference_curve[x], reference_curve['reference'], linestyle='--', color='gray',
                    label='reference')
        for label, value in (reference or {}).items():
            ax.axhline(value, linestyle=':', color='black', alpha=0.6, label=label)
        if logx:
            ax.set_xscale('log')
        if logy:
            ax.set_yscale('log')
        ax.set_title(title, fontsize=14)
        ax.set_xlabel(xlabel or x, fontsize=12)
        ax.set_ylabel(ylabel or y, fontsize=12)
        if ax.get_legend_handles_labels()[0]:
            ax.legend()
        return _save(fig, save_path)
    except Exception as e:
        logger.error(f"Error generating line chart {save_path}: {str(e)}")
        return None


def box_chart(df: pd.DataFrame, x: str, y: str, save_path: str, title: str,
              ylabel: Optional[str] = None) -> Optional[str]:
    """Box plot of y per category x"""
    try:
        fig, ax = plt.subplots(figsize=(8, 5))
        if len(df):
            sns.boxplot(data=df, x=x, y=y, ax=ax)
        ax.axhline(0.0, color='black', linewidth=0.8)
        ax.set_title(title, fontsize=14)
        ax.set_ylabel(ylabel or y, fontsize=12)
        return _save(fig, save_path)
    except Exception as e:
        logger.error(f"Error generating box chart {save_path}: {str(e)}")
        return None


def bar_chart(df: pd.DataFrame, x: str, y: str, save_path: str, title: str,
              hue: Optional[str] = None, ylabel: Optional[str] = None) -> Optional[str]:
    """Bar chart of y per category x"""
    try:
        fig, ax = plt.subplots(figsize=(8, 5))
        if len(df):
            sns.barplot(data=df, x=x, y=y, hue=hue, ax=ax)
        ax.set_title(title, fontsize=14)
        ax.set_ylabel(ylabel or y, fontsize=12)
        return _save(fig, save_path)
    except Exception as e:
        logger.error(f"Error generating bar chart {save_path}: {str(e)}")
        return None


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, artifacts: Sequence[str], metadata: Dict[str, Any]) -> str:
    """
    Write manifest.json with a checksum per artifact

    Args:
        out_dir: Experiment directory
        artifacts: Artifact paths relative to out_dir
        metadata: Extra keys (experiment name, anchor, check status)

    Returns:
        Path of the manifest
    """
    files = {rel: file_sha256(os.path.join(out_dir, rel)) for rel in sorted(artifacts)}
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, 'w') as f:
        json.dump({**metadata, 'files': files}, f, indent=2, sort_keys=True)
    return path


def verify_manifest(out_dir: str) -> Dict[str, Any]:
    """
    Check every artifact listed in manifest.json against its checksum

    Args:
        out_dir: Experiment directory

    Returns:
        The manifest contents
    """
    path = os.path.join(out_dir, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise CorruptArtifactError(f"{out_dir}: no {MANIFEST_NAME}")
    try:
        with open(path, 'r') as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise CorruptArtifactError(f"{path}: unreadable manifest: {str(e)}") from e
    for rel, expected in manifest.get('files', {}).items():
        artifact = os.path.join(out_dir, rel)
        if not os.path.isfile(artifact):
            raise CorruptArtifactError(f"{out_dir}: missing artifact {rel}")
        if file_sha256(artifact) != expected:
            raise CorruptArtifactError(f"{out_dir}: checksum mismatch for {rel}")
    return manifest


def experiment_dirs(path: str) -> List[str]:
    """The directory itself if it holds a manifest, else its subdirectories that do"""
    if os.path.isfile(os.path.join(path, MANIFEST_NAME)):
        return [path]
    if not os.path.isdir(path):
        raise CorruptArtifactError(f"{path} is not an artifact directory")
    found = [os.path.join(path, name) for name in sorted(os.listdir(path))
             if os.path.isfile(os.path.join(path, name, MANIFEST_NAME))]
    if not found:
        raise CorruptArtifactError(f"{path} contains no experiment artifacts")
    return found


def _criteria_table(criteria: pd.DataFrame) -> List[str]:
    lines = ["| Criterion | Value | Threshold | Result |", "|---|---|---|---|"]
    for _, row in criteria.iterrows():
        result = 'PASS' if bool(row['passed']) else 'FAIL'
        lines.append(f"| {row['criterion']} | {row['value']:.6g} | {row['comparison']} {row['threshold']:.6g} | {result} |")
    return lines


def emit_report(path: str) -> str:
    """
    Write SUMMARY.md for one experiment directory or a root of several

    Args:
        path: Experiment directory or artifact root

    Returns:
        Path of the written summary
    """
    sections = ["# Experiment summary", ""]
    for exp_dir in experiment_dirs(path):
        manifest = verify_manifest(exp_dir)
        criteria_path = os.path.join(exp_dir, 'criteria.csv')
        criteria = pd.read_csv(criteria_path) if os.path.isfile(criteria_path) else pd.DataFrame()
        overall = 'PASS' if len(criteria) and criteria['passed'].astype(bool).all() else 'FAIL'
        charts = sorted(f for f in manifest.get('files', {}) if f.endswith('.svg'))

        sections.append(f"## {manifest.get('experiment', os.path.basename(exp_dir))}: {overall}")
        sections.append("")
        sections.append(f"Anchor: {manifest.get('anchor', '')}")
        sections.append("")
        sections.append(f"Replicates: {manifest.get('replicates', '?')}, master seed: {manifest.get('master_seed', '?')}")
        sections.append("")
        if len(criteria):
            sections.extend(_criteria_table(criteria))
        else:
            sections.append("No criteria evaluated.")
        sections.append("")
        anchors = manifest.get('anchors', {})
        if anchors:
            sections.extend(["| Artifact | Reproduces |", "|---|---|"])
            sections.extend(f"| {artifact} | {anchor} |" for artifact, anchor in sorted(anchors.items()))
            sections.append("")
        for chart in charts:
            rel = os.path.relpath(os.path.join(exp_dir, chart), path)
            sections.append(f"![{chart}]({rel})")
            sections.append("")
            sections.append(f"{chart} → {anchors.get(chart, manifest.get('anchor', ''))}")
            sections.append("")

    summary_path = os.path.join(path, SUMMARY_NAME)
    with open(summary_path, 'w', encoding='utf-8') as f:
        f.write("\n".join(sections))
    logger.info(f"Summary written to {summary_path}")
    return summary_path
