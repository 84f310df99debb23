from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from simple2complex.common.errors import ReportError
from simple2complex.common.models import GAMMA_GROUPS, GammaRow
from simple2complex.common.utils import write_csv

GAMMA_CHANNEL_FILE = "gamma_channels.csv"
GAMMA_SUMMARY_FILE = "gamma_summary.csv"
GAMMA_GROUPS_FILE = "gamma_groups.csv"


@dataclass(frozen=True)
class GammaGroup:
    layers: Tuple[str, ...]
    means: Tuple[float, ...]

    @property
    def strictly_decreasing(self) -> bool:
        return all(a > b for a, b in zip(self.means, self.means[1:]))


@dataclass
class GammaReport:
    rows: List[GammaRow]
    groups: List[GammaGroup] = field(default_factory=list)

    def row(self, layer: str) -> GammaRow:
        for r in self.rows:
            if r.layer == layer:
                return r
        raise ReportError(f"Layer {layer} is not in this report.", valid=[r.layer for r in self.rows])

    def summary_rows(self) -> List[Dict[str, object]]:
        return [{"layer": r.layer, "mean_abs_gamma": r.mean_abs_gamma} for r in self.rows]

    def channel_rows(self) -> List[Dict[str, object]]:
        return [
            {"layer": r.layer, "channel": c, "gamma": g}
            for r in self.rows
            for c, g in enumerate(r.gammas)
        ]

    def group_rows(self) -> List[Dict[str, object]]:
        return [
            {
                "layers": " > ".join(g.layers),
                "means": " ".join(f"{m:.6f}" for m in g.means),
                "strictly_decreasing": g.strictly_decreasing,
            }
            for g in self.groups
        ]


def build_gamma_report(
    gammas: Mapping[str, np.ndarray],
    *,
    layers: Optional[Sequence[str]] = None,
    groups: Sequence[Sequence[str]] = (),
) -> GammaReport:
    """Per-channel gammas and mean |gamma| for ``layers`` plus the requested comparison groups.

    ``gammas`` maps every layer of the network to its batch-norm scale vector.
    """
    valid = list(gammas)
    wanted: List[str] = list(layers) if layers is not None else []
    for group in groups:
        wanted.extend(g for g in group if g not in wanted)
    unknown = [name for name in wanted if name not in gammas]
    if unknown:
        raise ReportError(f"Unknown layer(s) {', '.join(unknown)}.", valid=valid)
    rows = [
        GammaRow(layer=name, gammas=tuple(float(g) for g in np.ravel(gammas[name])))
        for name in wanted
    ]
    by_name = {r.layer: r for r in rows}
    report_groups = [
        GammaGroup(layers=tuple(group), means=tuple(by_name[g].mean_abs_gamma for g in group))
        for group in groups
    ]
    return GammaReport(rows=rows, groups=report_groups)


def default_groups(available: Sequence[str]) -> List[Tuple[str, ...]]:
    """The standard comparison groups, trimmed to layers the network actually has."""
    present = set(available)
    groups = []
    for group in GAMMA_GROUPS:
        kept = tuple(g for g in group if g in present)
        if len(kept) >= 2:
            groups.append(kept)
    return groups


def write_gamma_report(report: GammaReport, out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        write_csv(out_dir / GAMMA_CHANNEL_FILE, ["layer", "channel", "gamma"], report.channel_rows()),
        write_csv(out_dir / GAMMA_SUMMARY_FILE, ["layer", "mean_abs_gamma"], report.summary_rows()),
        write_csv(
            out_dir / GAMMA_GROUPS_FILE,
            ["layers", "means", "strictly_decreasing"],
            report.group_rows(),
        ),
    ]
