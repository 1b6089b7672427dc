"""
Export Service - run directories, CSV sidecars, SVG charts and field snapshots
"""
import json
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from ci_step import PART_NAMES, EulerReynoldsState  # noqa: E402
from config import log  # noqa: E402
from models import ManifestError, RunManifest  # noqa: E402
from stochastic_flow import WongZakaiRow  # noqa: E402
from torus_spectral import load_snapshot, save_snapshot, sup_norm  # noqa: E402

MANIFEST_NAME = "manifest.json"
FIELDS_DIR = "fields"

ENERGY_COLUMNS = ["iteration", "t", "measured_energy", "target_e_times_1_minus_delta", "bound"]
ERROR_COLUMNS = ["iteration", "time", "part_name", "sup_norm", "C1_norm", "besov_m1"]
NORM_COLUMNS = [
    "iteration", "stopping_time", "reynolds_sup", "pressure_sup", "divergence_besov", "velocity_c1",
    "pressure_c1", "reynolds_c1", "velocity_increment", "pressure_increment", "increment_c1",
    "increment_holder", "interpolation_bound", "energy_error",
]
WONG_ZAKAI_COLUMNS = ["seed", "n", "varsigma", "path_dist", "lift_dist", "flow_dist", "inv_flow_dist"]

EXPORTS = ("energy", "errors", "norms", "fields")


class ExportService:
    # ------------------------------------------------------------------
    # Manifest
    # ------------------------------------------------------------------

    def write_manifest(self, manifest: RunManifest, out_dir: Union[str, Path]) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_NAME
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        return path

    def load_manifest(self, run_dir: Union[str, Path]) -> RunManifest:
        path = Path(run_dir) / MANIFEST_NAME
        if not path.exists():
            raise ManifestError(f"No {MANIFEST_NAME} in {run_dir}")
        try:
            return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ManifestError(f"{path} is not a readable run manifest: {exc}")

    # ------------------------------------------------------------------
    # Tidy tables
    # ------------------------------------------------------------------

    def energy_table(self, manifest: RunManifest) -> pd.DataFrame:
        rows = [
            {"iteration": record.level, **sample.model_dump()}
            for record in manifest.iterations
            for sample in record.energy
        ]
        return pd.DataFrame(rows, columns=ENERGY_COLUMNS)

    def error_table(self, manifest: RunManifest) -> pd.DataFrame:
        rows = [
            {"iteration": record.level, "time": s.t, "part_name": s.part_name, "sup_norm": s.sup_norm,
             "C1_norm": s.c1_norm, "besov_m1": s.besov_m1}
            for record in manifest.iterations
            for s in record.part_samples
        ]
        return pd.DataFrame(rows, columns=ERROR_COLUMNS)

    def norm_table(self, manifest: RunManifest) -> pd.DataFrame:
        rows = []
        for record in manifest.iterations:
            row = record.model_dump(exclude={"energy", "parts", "part_samples"})
            row["iteration"] = row.pop("level")
            rows.append(row)
        return pd.DataFrame(rows, columns=NORM_COLUMNS)

    def verdict_table(self, manifest: RunManifest) -> pd.DataFrame:
        return pd.DataFrame([v.model_dump() for v in manifest.verdicts],
                            columns=["name", "level", "inequality", "lhs", "rhs", "ratio", "verdict"])

    def write_tables(self, manifest: RunManifest, out_dir: Union[str, Path]) -> List[Path]:
        """energy.csv, errors.csv, norms.csv and verdicts.csv next to the manifest"""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        tables = {
            "energy.csv": self.energy_table(manifest),
            "errors.csv": self.error_table(manifest),
            "norms.csv": self.norm_table(manifest),
            "verdicts.csv": self.verdict_table(manifest),
        }
        paths = []
        for name, frame in tables.items():
            path = out_dir / name
            frame.to_csv(path, index=False, float_format="%.17g")
            paths.append(path)
        return paths

    # ------------------------------------------------------------------
    # Charts
    # ------------------------------------------------------------------

    def _save_chart(self, figure, path: Path) -> Path:
        figure.tight_layout()
        figure.savefig(path, format="svg", metadata={"Date": None})
        plt.close(figure)
        return path

    def energy_chart(self, manifest: RunManifest, path: Path) -> Path:
        figure, ax = plt.subplots(figsize=(7, 4))
        table = self.energy_table(manifest)
        for level, group in table.groupby("iteration"):
            ax.plot(group["t"], group["measured_energy"], marker="o", label=f"∫|v_{level}|²")
            ax.plot(group["t"], group["target_e_times_1_minus_delta"], linestyle="--",
                    label=f"e(t)(1−δ_{level})")
        ax.set_xlabel("t")
        ax.set_ylabel("energy")
        ax.legend(fontsize="small")
        return self._save_chart(figure, path)

    def error_chart(self, manifest: RunManifest, path: Path) -> Path:
        figure, ax = plt.subplots(figsize=(7, 4))
        steps = [record for record in manifest.iterations if record.parts]
        for name in PART_NAMES:
            values = [record.parts[name].sup_norm for record in steps]
            if any(v > 0 for v in values):
                ax.semilogy([record.level for record in steps], values, marker="o", label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel("‖ℛ^φ part‖_∞")
        ax.legend(fontsize="small")
        return self._save_chart(figure, path)

    def reynolds_chart(self, manifest: RunManifest, path: Path) -> Path:
        figure, ax = plt.subplots(figsize=(7, 4))
        levels = [record.level for record in manifest.iterations]
        values = [record.reynolds_sup for record in manifest.iterations]
        ax.plot(levels, values, marker="o", label="‖R̊_n‖_∞")
        if any(v > 0 for v in values):
            ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.legend(fontsize="small")
        return self._save_chart(figure, path)

    # ------------------------------------------------------------------
    # Field snapshots
    # ------------------------------------------------------------------

    def write_state_snapshots(self, state: EulerReynoldsState, out_dir: Union[str, Path], every: int) -> List[Path]:
        """(v, q, R̊) of every k-th frame as one snapshot file per frame"""
        if every <= 0:
            return []
        folder = Path(out_dir) / FIELDS_DIR
        paths = []
        for i in range(0, len(state.times), every):
            name = f"level{state.level}_frame{i:04d}.seci"
            paths.append(save_snapshot(folder / name, [state.v[i], state.q[i], state.R[i]]))
        return paths

    def field_table(self, run_dir: Union[str, Path]) -> pd.DataFrame:
        """One row per stored field, read back through the snapshot decoder"""
        rows = []
        for path in sorted((Path(run_dir) / FIELDS_DIR).glob("*.seci")):
            for position, field in enumerate(load_snapshot(path)):
                rows.append({"file": path.name, "position": position, "shape": field.shape, "N": field.N,
                             "sup_norm": sup_norm(field)})
        return pd.DataFrame(rows, columns=["file", "position", "shape", "N", "sup_norm"])

    # ------------------------------------------------------------------

    def export(self, run_dir: Union[str, Path], what: Iterable[str] = EXPORTS,
               out_dir: Union[str, Path, None] = None) -> List[Path]:
        """Plot-ready files for the selected series of an existing run"""
        manifest = self.load_manifest(run_dir)
        target = Path(out_dir or Path(run_dir) / "export")
        target.mkdir(parents=True, exist_ok=True)
        written = []
        for item in what:
            if item == "energy":
                self.energy_table(manifest).to_csv(target / "energy.csv", index=False, float_format="%.17g")
                written += [target / "energy.csv", self.energy_chart(manifest, target / "energy.svg")]
            elif item == "errors":
                self.error_table(manifest).to_csv(target / "errors.csv", index=False, float_format="%.17g")
                written += [target / "errors.csv", self.error_chart(manifest, target / "errors.svg")]
            elif item == "norms":
                self.norm_table(manifest).to_csv(target / "norms.csv", index=False, float_format="%.17g")
                written += [target / "norms.csv", self.reynolds_chart(manifest, target / "reynolds.svg")]
            elif item == "fields":
                self.field_table(run_dir).to_csv(target / "fields.csv", index=False, float_format="%.17g")
                written.append(target / "fields.csv")
            else:
                raise ManifestError(f"Unknown export '{item}' (known: {', '.join(EXPORTS)})")
        log(f"📦 [EXPORT] {len(written)} file(s) in {target}")
        return written

    # ------------------------------------------------------------------
    # Other verbs
    # ------------------------------------------------------------------

    def write_wong_zakai(self, rows: Sequence[WongZakaiRow], slopes: Dict[str, float],
                         out_dir: Union[str, Path]) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        table = pd.DataFrame(
            [{"seed": r.seed, "n": r.level, "varsigma": r.varsigma, "path_dist": r.path_dist,
              "lift_dist": r.lift_dist, "flow_dist": r.flow_dist, "inv_flow_dist": r.inv_flow_dist}
             for r in rows],
            columns=WONG_ZAKAI_COLUMNS,
        )
        rates = out_dir / "wong_zakai.csv"
        table.to_csv(rates, index=False, float_format="%.17g")
        summary = out_dir / "wong_zakai_slopes.json"
        summary.write_text(json.dumps(slopes, indent=2), encoding="utf-8")
        return [rates, summary]

    def write_json(self, payload: Dict, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        return path


# Global instance
export_service = ExportService()
