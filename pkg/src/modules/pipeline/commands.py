import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import ScenarioConfig
from ..gkae.model import load_checkpoint, rollout, save_checkpoint
from ..gkae.train import epsilon_pred, save_report, split_dataset, train
from ..lpd.planner import (
    PLAN_COLUMNS,
    connectivity_report,
    min_connectivity_power,
    outage_report,
    received_power_frame,
    solve_uniform,
    sweep_links,
    sweep_nodes,
    sweep_snr,
    topology_edges,
)
from ..swarm.dynamics import save_trajectory, simulate
from ..swarm.swarm_graph import load_dataset, make_dataset, save_dataset
from ..utils.errors import ArtifactMissingError, GateFailure, HorizonError
from ..utils.storage import ensure_dir, read_csv, read_json, write_csv, write_json

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["t", "uav_id", "x_pred", "y_pred", "x_true", "y_true"]
# the prediction gate looks at the longest horizon up to this one
GATE_MAX_HORIZON = 80


class Pipeline:
    TRAJECTORY_FILE = "trajectory.csv"
    PARAMS_FILE = "swarm_params.json"
    DATASET_FILE = "dataset.json"
    CHECKPOINT_FILE = "checkpoint.json"
    REPORT_FILE = "train_report.csv"
    SWEEP_FILE = "b_sweep.csv"
    PREDICTIONS_FILE = "predictions.csv"
    PLAN_FILE = "power_plan.csv"
    PLAN_SUMMARY_FILE = "power_plan.json"
    RECEIVED_FILE = "received_power.csv"
    CONNECTIVITY_FILE = "connectivity.json"
    EDGES_FILE = "topology_edges.csv"
    METRICS_FILE = "metrics.json"

    def __init__(self, config: ScenarioConfig):
        self.config = config

    def path(self, name):
        return self.config.path(name)

    def setup_output_directory(self):
        ensure_dir(self.config.output_dir)
        if not os.access(self.config.output_dir, os.W_OK):
            raise PermissionError(f"Output directory is not writable: {self.config.output_dir}")

    @staticmethod
    def checkpoint_name(b=None):
        return Pipeline.CHECKPOINT_FILE if b is None else f"checkpoint_b{b}.json"

    @staticmethod
    def report_name(b=None):
        return Pipeline.REPORT_FILE if b is None else f"train_report_b{b}.csv"

    def _require(self, name, kind):
        path = self.path(name)
        if not os.path.exists(path):
            raise ArtifactMissingError(f"Missing {kind}: {path} (run the upstream command first)")
        return path

    def simulate(self) -> Dict:
        self.setup_output_directory()
        swarm = self.config.swarm
        trajectory = simulate(swarm, T=self.config.train.trajectory_steps)
        dataset = make_dataset(trajectory, swarm.D_tilde)

        save_trajectory(trajectory, self.path(self.TRAJECTORY_FILE))
        write_json(self.path(self.PARAMS_FILE), swarm.to_dict())
        save_dataset(dataset, self.path(self.DATASET_FILE))
        logger.info(f"Wrote trajectory and dataset to {self.config.output_dir}")
        return {"seed": swarm.seed, "snapshots": len(dataset), "dataset": self.path(self.DATASET_FILE)}

    def _held_out(self, dataset):
        _, validation = split_dataset(dataset, self.config.train.train_fraction)
        return validation

    def train(self, sweep_b: Optional[Sequence[int]] = None) -> List[Dict]:
        dataset = load_dataset(self._require(self.DATASET_FILE, "dataset"))
        self.setup_output_directory()
        training, validation = split_dataset(dataset, self.config.train.train_fraction)
        horizons = [p for p in self.config.horizons if p <= len(validation)]
        if len(horizons) < len(self.config.horizons):
            raise HorizonError(
                f"horizons {self.config.horizons} exceed the {len(validation)} held-out snapshots"
            )

        results = []
        for b in (sweep_b or [None]):
            train_config = self.config.train if b is None else self.config.train.model_copy(update={"b": b})
            model, report = train(training, train_config, validation=validation, horizons=horizons)
            save_checkpoint(model, self.path(self.checkpoint_name(b)))
            save_report(report, self.path(self.report_name(b)))
            row = {"b": train_config.b, "final_loss": report.total[-1], "wall_clock_seconds": report.wall_clock_seconds}
            if len(report.total) >= 100:
                row["loss_epoch_100"] = report.total[99]
            row.update({f"eps_pred_p{p}": v for p, v in report.eps_pred.items()})
            results.append(row)

        if sweep_b:
            summary = pd.DataFrame(results).drop(columns=["wall_clock_seconds"])
            write_csv(self.path(self.SWEEP_FILE), summary)
        return results

    def predict(self, p: Optional[int] = None, b: Optional[int] = None) -> Dict:
        p = p or self.config.predict_horizon
        model = load_checkpoint(self._require(self.checkpoint_name(b), "checkpoint"))
        dataset = load_dataset(self._require(self.DATASET_FILE, "dataset"))
        validation = self._held_out(dataset)
        if p > len(validation):
            raise HorizonError(f"p={p} exceeds the {len(validation)} held-out snapshots")

        normalizer = validation.normalizer
        predicted = normalizer.denormalize(rollout(validation.snapshots[0], model, p))
        truth = normalizer.denormalize(validation.features()[1:p])
        rows = [
            (t + 2, l, predicted[t, l, 0], predicted[t, l, 1], truth[t, l, 0], truth[t, l, 1])
            for t in range(p - 1)
            for l in range(validation.L)
        ]
        self.setup_output_directory()
        write_csv(self.path(self.PREDICTIONS_FILE), pd.DataFrame(rows, columns=PREDICTION_COLUMNS))
        logger.info(f"Wrote {len(rows)} predicted positions for p={p}")
        return {"p": p, "eps_pred": epsilon_pred(model, validation, p), "rows": len(rows)}

    def load_predictions(self) -> Tuple[List[np.ndarray], int]:
        frame = read_csv(self._require(self.PREDICTIONS_FILE, "predictions"), kind="predictions",
                         required_columns=PREDICTION_COLUMNS)
        altitude = self.config.swarm.altitude
        snapshots = []
        for _, group in frame.sort_values(["t", "uav_id"]).groupby("t", sort=True):
            xy = group[["x_pred", "y_pred"]].to_numpy(dtype=float)
            snapshots.append(np.column_stack([xy, np.full(len(xy), altitude)]))
        return snapshots, int(frame["t"].min())

    def plan(self, vary_n=None, vary_c=None, vary_snr=None) -> Dict:
        predictions, t0 = self.load_predictions()
        self.setup_output_directory()
        settings, channel = self.config.lpd, self.config.channel
        lpd_config = settings.build(channel)
        layout = lpd_config.layout

        plan = solve_uniform(layout, predictions, lpd_config, t0=t0)
        write_csv(self.path(self.PLAN_FILE), plan.to_frame())
        write_json(self.path(self.PLAN_SUMMARY_FILE), plan.to_dict())
        write_csv(self.path(self.RECEIVED_FILE), received_power_frame(plan, predictions, layout, channel.eta_prime))

        P_low = min_connectivity_power(layout, lpd_config.C_tilde, channel)
        degrees, components = connectivity_report(layout, P_low, channel)
        write_json(self.path(self.CONNECTIVITY_FILE), {
            "P_star": P_low,
            "degrees": degrees,
            "components": components,
            "layout": layout.to_dict(),
            "outage": outage_report(layout, P_low, channel, lpd_config.C_tilde, seed=channel.fading_seed),
        })
        write_csv(self.path(self.EDGES_FILE), topology_edges(layout, P_low, channel))

        if vary_n:
            write_csv(self.path("sweep_nodes.csv"), sweep_nodes(vary_n, settings, channel))
        if vary_c:
            write_csv(self.path("sweep_links.csv"), sweep_links(vary_c, settings, channel))
        if vary_snr:
            write_csv(self.path("sweep_snr.csv"), sweep_snr(vary_snr, settings, channel))
        return {
            "feasible_rate": plan.feasible_rate,
            "max_received_W": plan.max_received,
            "min_margin": plan.min_margin,
            "components": components,
        }

    def evaluate(self, b: Optional[int] = None) -> Dict:
        model = load_checkpoint(self._require(self.checkpoint_name(b), "checkpoint"))
        dataset = load_dataset(self._require(self.DATASET_FILE, "dataset"))
        plan = read_csv(self._require(self.PLAN_FILE, "power plan"), kind="power plan", required_columns=PLAN_COLUMNS)
        connectivity = read_json(self._require(self.CONNECTIVITY_FILE, "connectivity report"), kind="connectivity report")
        validation = self._held_out(dataset)

        eps = {p: epsilon_pred(model, validation, p) for p in self.config.horizons if p <= len(validation)}
        gated = [p for p in eps if p <= GATE_MAX_HORIZON] or list(eps)
        gate_horizon = max(gated) if gated else None
        feasible = plan[plan["feasible"].astype(bool)]
        P_det = self.config.lpd.P_det
        max_received = float(feasible["max_received_W"].max()) if len(feasible) else float("nan")
        margin = float(feasible["margin"].min()) if len(feasible) else float("nan")

        gates = {
            "eps_pred": gate_horizon is not None and np.isfinite(eps[gate_horizon])
                        and eps[gate_horizon] <= self.config.eps_pred_gate,
            "feasibility": len(plan) > 0 and len(feasible) == len(plan),
            "covertness": len(feasible) > 0 and max_received <= P_det and margin > 0,
            "connectivity": connectivity.get("components") == 1,
        }
        metrics = {
            "eps_pred": {str(p): v for p, v in eps.items()},
            "feasibility_rate": float(len(feasible) / len(plan)) if len(plan) else 0.0,
            "max_received_W": max_received,
            "covertness_margin": margin,
            "components": connectivity.get("components"),
            "koopman_eigenvalue_moduli": sorted((float(m) for m in np.abs(model.koopman_eigenvalues())), reverse=True),
            "gates": {name: bool(ok) for name, ok in gates.items()},
        }
        self.setup_output_directory()
        write_json(self.path(self.METRICS_FILE), metrics)

        failed = [name for name, ok in gates.items() if not ok]
        if failed:
            logger.warning(f"Failed gates: {failed}")
            raise GateFailure(failed)
        return metrics


def cmd_simulate(config: ScenarioConfig) -> Dict:
    return Pipeline(config).simulate()


def cmd_train(config: ScenarioConfig, sweep_b: Optional[Sequence[int]] = None) -> List[Dict]:
    return Pipeline(config).train(sweep_b=sweep_b)


def cmd_predict(config: ScenarioConfig, p: Optional[int] = None, b: Optional[int] = None) -> Dict:
    return Pipeline(config).predict(p=p, b=b)


def cmd_plan(config: ScenarioConfig, vary_n=None, vary_c=None, vary_snr=None) -> Dict:
    return Pipeline(config).plan(vary_n=vary_n, vary_c=vary_c, vary_snr=vary_snr)


def cmd_evaluate(config: ScenarioConfig, b: Optional[int] = None) -> Dict:
    return Pipeline(config).evaluate(b=b)


def load_metrics(path) -> Dict:
    return read_json(path, kind="metrics")
