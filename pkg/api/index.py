"""
Flask API for swannlab run outputs
Read-only ground-station telemetry over the run directories under SWANN_RUNS_DIR
"""

import json
import os
import sys
from pathlib import Path

import pandas as pd
import structlog
from flask import Flask, jsonify, request
from flask_cors import CORS

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from experiments import EXPERIMENTS

logger = structlog.get_logger(__name__)

app = Flask(__name__)
CORS(app)


class RunNotFound(LookupError):
    pass


def runs_dir() -> Path:
    return Path(app.config.get("RUNS_DIR") or os.environ.get("SWANN_RUNS_DIR", "runs"))


def run_path(run: str) -> Path:
    root = runs_dir().resolve()
    path = (root / run).resolve()
    if root not in path.parents or not path.is_dir():
        raise RunNotFound(f"No run named {run!r}")
    return path


def read_json(path: Path):
    return json.loads(path.read_text())


def frame_records(frame: pd.DataFrame):
    """JSON-safe rows (NaN and inf become null)"""
    return json.loads(frame.to_json(orient="records"))


@app.errorhandler(RunNotFound)
def not_found(e):
    return jsonify({"success": False, "error": str(e)}), 404


@app.route("/api/health", methods=["GET"])
def health():
    return jsonify({"success": True, "runs_dir": str(runs_dir()), "experiments": list(EXPERIMENTS)})


@app.route("/api/runs", methods=["GET"])
def list_runs():
    """
    Run directories and the experiments they hold
    """
    try:
        root = runs_dir()
        runs = []
        if root.is_dir():
            for path in sorted(p for p in root.iterdir() if p.is_dir()):
                experiments = sorted(s.parent.name for s in path.glob("*/summary.json"))
                runs.append({"run": path.name, "experiments": experiments,
                             "verified": (path / "verify.json").exists()})
        return jsonify({"success": True, "count": len(runs), "runs": runs})
    except Exception as e:
        logger.exception("listing runs failed")
        return jsonify({"success": False, "error": str(e)}), 500


@app.route("/api/runs/<run>/summary", methods=["GET"])
def run_summary(run):
    """
    Experiment summaries of one run
    Query params:
        - experiment: only this experiment id (optional)
    """
    path = run_path(run)
    wanted = request.args.get("experiment")
    try:
        summaries = {}
        for summary_path in sorted(path.glob("*/summary.json")):
            payload = read_json(summary_path)
            experiment = payload.get("experiment", summary_path.parent.name)
            if wanted and experiment != wanted:
                continue
            summaries[experiment] = payload
        if wanted and not summaries:
            return jsonify({"success": False, "error": f"No {wanted} results in {run}"}), 404
        return jsonify({"success": True, "run": run, "summaries": summaries})
    except Exception as e:
        return jsonify({"success": False, "error": str(e)}), 500


@app.route("/api/runs/<run>/adaptation", methods=["GET"])
def run_adaptation(run):
    """
    Per-step adaptation logs
    Query params:
        - arm: 'anchored' or 'unanchored' (optional)
        - seed: seed number (optional)
    """
    path = run_path(run)
    arm = request.args.get("arm")
    seed = request.args.get("seed", type=int)
    try:
        logs = []
        for csv_path in sorted(path.rglob("adaptation.csv")):
            seed_dir = csv_path.parent
            arm_name = seed_dir.parent.name
            seed_number = int(seed_dir.name[len("seed"):]) if seed_dir.name.startswith("seed") else None
            if arm and arm_name != arm:
                continue
            if seed is not None and seed_number != seed:
                continue
            logs.append({"arm": arm_name, "seed": seed_number, "steps": frame_records(pd.read_csv(csv_path))})
        return jsonify({"success": True, "run": run, "count": len(logs), "logs": logs})
    except Exception as e:
        return jsonify({"success": False, "error": str(e)}), 500


@app.route("/api/runs/<run>/spectra", methods=["GET"])
def run_spectra(run):
    """
    Motor-duty FFT spectra before and after adaptation
    Query params:
        - seed: seed number (optional)
    """
    path = run_path(run)
    seed = request.args.get("seed", type=int)
    try:
        spectra = []
        for csv_path in sorted(path.rglob("spectrum_*.csv")):
            seed_dir = csv_path.parent
            if seed is not None and seed_dir.name != f"seed{seed}":
                continue
            spectra.append({"arm": seed_dir.parent.name, "seed": seed_dir.name,
                            "phase": csv_path.stem[len("spectrum_"):],
                            "points": frame_records(pd.read_csv(csv_path))})
        return jsonify({"success": True, "run": run, "count": len(spectra), "spectra": spectra})
    except Exception as e:
        return jsonify({"success": False, "error": str(e)}), 500


@app.route("/api/runs/<run>/verify", methods=["GET"])
def run_verify(run):
    path = run_path(run)
    verify_path = path / "verify.json"
    if not verify_path.exists():
        return jsonify({"success": False, "error": f"{run} has not been verified"}), 404
    try:
        return jsonify({"success": True, "run": run, "verify": read_json(verify_path)})
    except Exception as e:
        return jsonify({"success": False, "error": str(e)}), 500


if __name__ == "__main__":
    app.run(debug=True, port=5000)
