"""Shared fixtures: demo banks, demo networks, tiny datasets."""

import numpy as np
import pytest

from adaptest import bayesnet as bn
from adaptest.data import Item, QuestionBank


@pytest.fixture
def small_bank():
    return QuestionBank(
        items=(
            Item(id="q1", text="one", grade_points=2),
            Item(id="q2", text="two", grade_points=3),
            Item(id="q3", text="three", grade_points=1),
        )
    )


def make_reference_cpt_net():
    """Three binary roots feeding one child with the hand-filled 8-column CPT."""
    variables = [
        bn.Variable("X1", bn.Role.SKILL, ("0", "1"), ordinal=True),
        bn.Variable("X2", bn.Role.SKILL, ("0", "1"), ordinal=True),
        bn.Variable("X3", bn.Role.SKILL, ("0", "1"), ordinal=True),
        bn.Variable("Y", bn.Role.QUESTION, ("0", "1")),
    ]
    y1 = {
        (1, 1, 1): 0.95, (1, 1, 0): 0.59, (1, 0, 1): 0.78, (1, 0, 0): 0.33,
        (0, 1, 1): 0.15, (0, 1, 0): 0.5, (0, 0, 1): 0.1, (0, 0, 0): 0.92,
    }
    table = np.zeros((2, 2, 2, 2))
    for cfg, p in y1.items():
        table[cfg] = (1.0 - p, p)
    nodes = [
        bn.CptNode("X1", (), np.array([0.5, 0.5])),
        bn.CptNode("X2", (), np.array([0.5, 0.5])),
        bn.CptNode("X3", (), np.array([0.5, 0.5])),
        bn.CptNode("Y", ("X1", "X2", "X3"), table),
    ]
    return bn.BayesNet(variables, nodes)


def make_demo_net():
    """2 skills, 6 binary questions (one noisy-OR), used by selection tests."""
    variables = [
        bn.Variable("S1", bn.Role.SKILL, ("low", "mid", "high"), ordinal=True),
        bn.Variable("S2", bn.Role.SKILL, ("low", "high"), ordinal=True),
    ] + [
        bn.Variable(f"Q{k}", bn.Role.QUESTION, ("incorrect", "correct"))
        for k in range(1, 7)
    ]

    def q_on_s1(p_low, p_mid, p_high):
        return np.array([[1 - p_low, p_low], [1 - p_mid, p_mid], [1 - p_high, p_high]])

    def q_on_s2(p_low, p_high):
        return np.array([[1 - p_low, p_low], [1 - p_high, p_high]])

    nodes = [
        bn.CptNode("S1", (), np.array([0.3, 0.4, 0.3])),
        bn.CptNode("S2", (), np.array([0.45, 0.55])),
        bn.CptNode("Q1", ("S1",), q_on_s1(0.15, 0.5, 0.85)),
        bn.CptNode("Q2", ("S1",), q_on_s1(0.3, 0.55, 0.8)),
        bn.CptNode("Q3", ("S1",), q_on_s1(0.05, 0.4, 0.95)),
        bn.CptNode("Q4", ("S2",), q_on_s2(0.2, 0.9)),
        bn.CptNode("Q5", ("S2",), q_on_s2(0.35, 0.7)),
        bn.NoisyOrNode(
            "Q6",
            ("S2",),
            link_probs=(0.75,),
            leak=0.1,
        ),
    ]
    return bn.BayesNet(variables, nodes)
