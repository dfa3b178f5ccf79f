"""Language-grounded object orientation toolkit."""

import json

from . import _sofarkit
from ._sofarkit import Model, angular_error, kabsch_rotation, pca_baseline, vocabulary

__all__ = [
    "Model",
    "angular_error",
    "build_scene_graph",
    "evaluate",
    "generate_dataset",
    "generate_object",
    "generate_suite",
    "kabsch_rotation",
    "parse_instruction",
    "pca_baseline",
    "plan",
    "pretty_instruction",
    "relation_holds",
    "run_suite",
    "train",
    "vocabulary",
]


def generate_object(family, seed, n_points=1024):
    return json.loads(_sofarkit.generate_object(family, seed, n_points))


def generate_dataset(out_dir, count=1280, n_points=1024, val_fraction=0.2, seed=0):
    return json.loads(_sofarkit.generate_dataset(str(out_dir), count, n_points, val_fraction, seed))


def train(data_dir, model_config=None, train_config=None):
    """Returns (Model, history)."""
    model, history = _sofarkit.train(
        str(data_dir),
        None if model_config is None else json.dumps(model_config),
        None if train_config is None else json.dumps(train_config),
    )
    return model, json.loads(history)


def evaluate(model, data_dir):
    return json.loads(_sofarkit.evaluate(model, str(data_dir)))


def parse_instruction(text):
    return json.loads(_sofarkit.parse_instruction(text))


def pretty_instruction(goal):
    return _sofarkit.pretty_instruction(json.dumps(goal))


def build_scene_graph(objects):
    """objects: iterable of (phrase, points, {part: direction})."""
    triples = [(p, [list(map(float, q)) for q in pts], list(parts.items())) for p, pts, parts in objects]
    return json.loads(_sofarkit.build_scene_graph(triples))


def plan(scene_path, instruction, predictor="oracle"):
    return json.loads(_sofarkit.plan(str(scene_path), instruction, predictor))


def generate_suite(out_dir, n_tasks=200, seed=0, n_points=1024):
    return json.loads(_sofarkit.generate_suite(str(out_dir), n_tasks, seed, n_points))


def run_suite(suite_dir, predictor="oracle", out_dir=None):
    return json.loads(_sofarkit.run_suite(str(suite_dir), predictor, None if out_dir is None else str(out_dir)))


def relation_holds(graph, relation, subject, refs):
    return _sofarkit.relation_holds(json.dumps(graph), relation, subject, list(refs))
