"""Build a demo models directory (bank.json + one model of each kind).

Usage: python3 scripts/make_demo_models.py <output-dir>

The directory is directly servable: `adaptest serve --models-dir <dir>`.
"""

import sys
from pathlib import Path

import numpy as np

from adaptest import bayesnet as bn
from adaptest import irt
from adaptest import neuralnet as nn
from adaptest.data import Item, QuestionBank, save_bank
from adaptest.persistence import make_envelope, save_model

QUESTIONS = [
    ("q1", "Is 3/4 greater than 2/3?"),
    ("q2", "Solve 2x + 6 = 14. Is x = 4?"),
    ("q3", "Does the line y = 2x - 1 pass through (2, 3)?"),
    ("q4", "Is the square root of 144 equal to 12?"),
    ("q5", "Does x^2 - 4 factor as (x - 2)(x + 2)?"),
    ("q6", "Is sin(pi / 2) equal to 1?"),
]


def build_bank() -> QuestionBank:
    return QuestionBank(items=tuple(Item(id=qid, text=text) for qid, text in QUESTIONS))


def irt_payload() -> dict:
    rng = np.random.default_rng(7)
    params = {
        qid: irt.IrtItemParams(
            a=float(rng.uniform(0.9, 2.0)), b=float(rng.uniform(-1.5, 1.5)), c=0.1
        )
        for qid, _ in QUESTIONS
    }
    payload = irt.params_to_payload(params)
    payload["score_stats"] = {"mean": 3.2, "sd": 1.4}
    return payload


def bn_payload() -> dict:
    variables = [
        bn.Variable("algebra", bn.Role.SKILL, ("low", "high"), ordinal=True),
        bn.Variable("geometry", bn.Role.SKILL, ("low", "high"), ordinal=True),
    ] + [bn.Variable(qid, bn.Role.QUESTION, ("incorrect", "correct")) for qid, _ in QUESTIONS]

    def q(parent, p_low, p_high):
        return bn.CptNode(
            parent[0], (parent[1],), np.array([[1 - p_low, p_low], [1 - p_high, p_high]])
        )

    nodes = [
        bn.CptNode("algebra", (), np.array([0.45, 0.55])),
        bn.CptNode("geometry", (), np.array([0.5, 0.5])),
        q(("q1", "algebra"), 0.3, 0.85),
        q(("q2", "algebra"), 0.25, 0.9),
        q(("q4", "algebra"), 0.35, 0.8),
        q(("q3", "geometry"), 0.2, 0.85),
        q(("q6", "geometry"), 0.3, 0.75),
        bn.NoisyOrNode("q5", ("algebra", "geometry"), link_probs=(0.7, 0.5), leak=0.1),
    ]
    net = bn.BayesNet(variables, nodes)
    weights = bn.equal_impact_weights(net, scale=3.0)
    payload = bn.net_to_payload(net, weights)
    payload["score_stats"] = {"mean": 3.0, "sd": 1.5}
    return payload


def nn_payload() -> dict:
    spec = nn.NetworkSpec(input_size=len(QUESTIONS), hidden_layers=())
    weights = nn.NetworkWeights(
        matrices=(np.ones((1, len(QUESTIONS))),), biases=(np.zeros(1),)
    )
    encoding = nn.AnswerEncoding(scheme="zero_one", missing_policy="item_mean",
                                 item_means=tuple([0.55] * len(QUESTIONS)))
    probs = {i: {0: 0.45, 1: 0.55} for i in range(len(QUESTIONS))}
    payload = nn.model_to_payload(
        spec, weights, encoding, [qid for qid, _ in QUESTIONS], probs
    )
    payload["score_stats"] = {"mean": 3.3, "sd": 1.3}
    return payload


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__, file=sys.stderr)
        return 1
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    save_bank(build_bank(), out / "bank.json")
    save_model(make_envelope("irt", irt_payload(), seed=7), out / "demo-irt.model.json")
    save_model(make_envelope("bn", bn_payload(), seed=7), out / "demo-bn.model.json")
    save_model(make_envelope("nn", nn_payload(), seed=7), out / "demo-nn.model.json")
    print(f"demo models written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
