"""
JSON readers and writers for models, evidence and observed CTBN paths.

MJP model::

    {"states": [...], "nu": [...], "tmin": 0, "tmax": 1,
     "Q": [[...]] | "Q_blocks": [[[...]]], "breakpoints": [...],
     "R": number | [...] | [[...]], "r_factor": 2.0, "eta": 0.1}

Evidence, either explicit log-likelihood tables (``null`` for log-zero)::

    {"obs_times": [...], "loglik": [[...], ...]}

or an emission matrix with observed symbols (which can be resampled)::

    {"obs_times": [...], "emission": [[...]], "observations": [...]}

CTBN model::

    {"nodes": [{"name", "states", "parents", "cim_table", "R", "R_breakpoints"}],
     "nu": [[...] per node] or "nu_joint": nested table over all nodes,
     "tmin", "tmax"}

Observed paths: ``[{"node", "jump_times", "states"}, ...]`` where states are
labels of that node.
"""
from __future__ import annotations

import json
import math

import numpy as np

from jumpchain.core import DiscreteEmission, Evidence, IntensityModel, ModelError, Trajectory
from jumpchain.ctbn import CtbnModel, CtbnNode

__all__ = [
    "load_json",
    "model_from_dict",
    "model_to_dict",
    "evidence_from_dict",
    "ctbn_from_dict",
    "observed_from_list",
    "read_model",
    "read_evidence",
    "read_ctbn",
    "read_observed",
]


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _require(d, key, what):
    if key not in d:
        raise ModelError(f"{what} is missing the field {key!r}")
    return d[key]


def model_from_dict(d):
    """Build an :class:`IntensityModel`; returns ``(model, eta)``."""
    if "Q_blocks" in d:
        Q = np.asarray(d["Q_blocks"], dtype=float)
    else:
        Q = np.asarray(_require(d, "Q", "model"), dtype=float)
    R = d.get("R", d.get("R_blocks"))
    if R is not None:
        R = np.asarray(R, dtype=float)
    model = IntensityModel(
        Q,
        np.asarray(_require(d, "nu", "model"), dtype=float),
        float(_require(d, "tmin", "model")),
        float(_require(d, "tmax", "model")),
        breakpoints=d.get("breakpoints", ()),
        R=R,
        labels=d.get("states"),
        r_factor=float(d.get("r_factor", 2.0)),
    )
    return model, d.get("eta")


def model_to_dict(model, eta=None):
    out = {
        "states": list(model.states.labels),
        "nu": model.nu.tolist(),
        "tmin": model.tmin,
        "tmax": model.tmax,
        "breakpoints": model.edges[1:-1].tolist(),
        "Q_blocks": model.Q_blocks.tolist(),
        "R": model.R_blocks.tolist(),
    }
    if eta is not None:
        out["eta"] = eta
    return out


def _loglik_row(row):
    return [-math.inf if v is None else float(v) for v in row]


def evidence_from_dict(d, n_states):
    """
    Parse evidence; returns ``(evidence, emission)`` where ``emission`` is a
    :class:`DiscreteEmission` or ``None`` for explicit tables.
    """
    times = np.asarray(_require(d, "obs_times", "evidence"), dtype=float)
    if "emission" in d:
        em = DiscreteEmission(np.asarray(d["emission"], dtype=float))
        if em.matrix.shape[0] != n_states:
            raise ModelError("emission matrix rows must match the number of states")
        ev = em.evidence(times, np.asarray(_require(d, "observations", "evidence"), dtype=np.int64))
        return ev, em
    table = np.array([_loglik_row(r) for r in _require(d, "loglik", "evidence")], dtype=float)
    return Evidence(times, table.reshape(len(times), n_states)), None


def ctbn_from_dict(d):
    nodes = []
    for nd in _require(d, "nodes", "CTBN model"):
        nodes.append(CtbnNode(
            name=str(_require(nd, "name", "CTBN node")),
            states=tuple(_require(nd, "states", "CTBN node")),
            cim=np.asarray(_require(nd, "cim_table", "CTBN node"), dtype=float),
            parents=tuple(nd.get("parents", ())),
            R=None if nd.get("R") is None else np.asarray(nd["R"], dtype=float),
            R_breakpoints=tuple(nd.get("R_breakpoints", ())),
        ))
    if "nu_joint" in d:
        nu = np.asarray(d["nu_joint"], dtype=float)
    else:
        nu = [np.asarray(v, dtype=float) for v in _require(d, "nu", "CTBN model")]
    return CtbnModel(nodes, float(_require(d, "tmin", "CTBN model")),
                     float(_require(d, "tmax", "CTBN model")), nu,
                     r_factor=float(d.get("r_factor", 2.0)))


def observed_from_list(model, items):
    """Map node index -> Trajectory from ``[{"node", "jump_times", "states"}]``."""
    out = {}
    for it in items:
        w = model.index(str(_require(it, "node", "observed path")))
        labels = model.labels[w]
        try:
            states = [labels.index(s) for s in _require(it, "states", "observed path")]
        except ValueError:
            raise ModelError(f"unknown state label in observed path of {model.names[w]!r}") from None
        if w in out:
            raise ModelError(f"node {model.names[w]!r} observed twice")
        out[w] = Trajectory(model.tmin, model.tmax, it.get("jump_times", []), states)
    return out


def read_model(path):
    return model_from_dict(load_json(path))


def read_evidence(path, n_states):
    return evidence_from_dict(load_json(path), n_states)


def read_ctbn(path):
    return ctbn_from_dict(load_json(path))


def read_observed(path, model):
    return observed_from_list(model, load_json(path))
