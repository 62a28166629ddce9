"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime (visible with `pytest -v -s`).

Every tolerance is pinned here; the oracles live in the sibling test modules
and stay independent of the code paths they check.
"""

import json
import math
import time

import numpy as np
import pytest

from adaptest import bayesnet as bn
from adaptest import irt
from adaptest import neuralnet as nn
from adaptest.adapters import BnStudentModel, IrtStudentModel, NnStudentModel
from adaptest.data import Item, QuestionBank, ResponseDataset, StudentRecord
from adaptest.engine import (
    EstimateView,
    TestSession,
    Transcript,
    TranscriptStep,
    max_questions,
    run_scripted,
    se_threshold,
)
from adaptest.persistence import load_model, make_envelope, save_model
from adaptest.psychometrics import (
    IQ_SCALE,
    ScoreStats,
    cronbach_alpha,
    standardize,
)
from adaptest.simulate import (
    child_seed,
    compare_policies,
    sample_bn_cohort,
    sample_irt_cohort,
)

from conftest import make_demo_net, make_reference_cpt_net
from test_bayesnet import (
    dense_joint,
    oracle_evidence_prob,
    oracle_expected_entropy,
    oracle_marginal,
    oracle_skill_entropy,
    random_evidence,
    random_net,
    z_layer_noisy_or_cpt,
)
from test_neuralnet import numeric_gradients
from test_psychometrics import dataset_from_matrix


class _Budget:
    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        status = "PASS" if exc_type is None else "FAIL"
        print(f"ACCEPTANCE {self.name}: {status} ({elapsed:.1f}s, budget {self.seconds}s)")
        if exc_type is None:
            assert elapsed < self.seconds, f"{self.name} exceeded its {self.seconds}s budget"
        return False


def test_acceptance_01_formula_unit_suite():
    with _Budget("formula unit suite", 10):
        # 3PL response function
        assert irt.irf(irt.IrtItemParams(a=1.0, b=0.7), 0.7) == 0.5
        assert irt.irf(irt.IrtItemParams(a=2.0, b=0.0, c=0.2), 0.0) == pytest.approx(0.6)
        for theta in np.linspace(-4, 4, 9):
            assert irt.irf(irt.IrtItemParams(a=0.0, b=1.5), theta) == pytest.approx(0.5)

        # item information: closed form, flat item, finite-difference oracle
        for a in (0.5, 1.0, 2.0):
            got = irt.item_information(irt.IrtItemParams(a=a, b=0.3), 0.3)
            assert got == pytest.approx(a * a / 4, rel=1e-12)
        assert irt.item_information(irt.IrtItemParams(a=0.0, b=1.5), 0.9) == 0.0
        rng = np.random.default_rng(0)
        h = 1e-5
        for _ in range(5):
            params = irt.IrtItemParams(
                a=float(rng.uniform(0.3, 3)), b=float(rng.uniform(-2, 2)),
                c=float(rng.uniform(0, 0.3)),
            )
            for theta in np.linspace(-3, 3, 21):
                fd = (irt.irf(params, theta + h) - irt.irf(params, theta - h)) / (2 * h)
                assert irt.irf_derivative(params, theta) == pytest.approx(fd, rel=1e-6, abs=1e-9)

        # standard error
        assert irt.standard_error(4.0) == 0.5
        assert irt.standard_error(1.0) == 1.0
        info = irt.item_information(irt.IrtItemParams(a=2.0, b=0.0), 0.0)
        assert irt.standard_error(info) == pytest.approx(1.0)

        # Cronbach's alpha
        col = [0, 1, 2, 3, 4, 2]
        assert cronbach_alpha(dataset_from_matrix(np.column_stack([col, col]))) == pytest.approx(1.0)
        a_col = [0, 0, 1, 1]
        b_col = [0, 1, 0, 1]
        assert cronbach_alpha(
            dataset_from_matrix(np.column_stack([a_col, b_col]))
        ) == pytest.approx(0.0, abs=1e-12)

        # standardization
        stats = ScoreStats(mean=40.0, variance=64.0, n=100)
        assert standardize(40.0, stats, IQ_SCALE) == pytest.approx(100.0)

        # skill entropy
        variables = [bn.Variable("S", bn.Role.SKILL, ("0", "1"), ordinal=True)]
        net1 = bn.BayesNet(variables, [bn.CptNode("S", (), np.array([0.5, 0.5]))])
        assert bn.skill_entropy(net1, {}) == pytest.approx(math.log(2))
        assert bn.skill_entropy(net1, {"S": 1}) == 0.0

        # expected score
        net2 = bn.BayesNet(
            [bn.Variable("S", bn.Role.SKILL, ("0", "1"), ordinal=True)],
            [bn.CptNode("S", (), np.array([0.25, 0.75]))],
        )
        weights = bn.SkillWeights(weights={"S": 10.0})
        assert bn.expected_score(net2, {}, weights) == pytest.approx(7.5)
        lo, hi = bn.score_range(net2, weights)
        assert (lo, hi) == (0.0, 10.0)


def test_acceptance_02_reference_value_checks():
    with _Budget("reference-value checks", 10):
        # a zero-discrimination item has a flat response curve at one half
        flat = irt.IrtItemParams(a=0.0, b=1.5, c=0.0)
        for theta in np.linspace(-6, 6, 25):
            assert irt.irf(flat, theta) == pytest.approx(0.5)

        # hand-filled CPT: P(Y=1 | X1=1, X2=1, X3=1) = 0.95
        net = make_reference_cpt_net()
        marg = bn.infer_marginals(net, {"X1": 1, "X2": 1, "X3": 1}, ["Y"])
        assert marg["Y"][1] == pytest.approx(0.95, abs=1e-12)

        # IQ = 100 + 15z, matching the z/IQ reference pairs within rounding
        z_stats = ScoreStats(mean=0.0, variance=1.0, n=281)
        assert standardize(2.06, z_stats, IQ_SCALE) == pytest.approx(131, abs=0.5)
        assert standardize(-1.00, z_stats, IQ_SCALE) == pytest.approx(85, abs=0.5)

        # equal-impact weight rule with state counts (2, 4): C1 = 2, C2 = 1
        variables = [
            bn.Variable("S1", bn.Role.SKILL, ("a", "b"), ordinal=True),
            bn.Variable("S2", bn.Role.SKILL, ("a", "b", "c", "d"), ordinal=True),
        ]
        nodes = [
            bn.CptNode("S1", (), np.array([0.5, 0.5])),
            bn.CptNode("S2", (), np.full(4, 0.25)),
        ]
        weights = bn.equal_impact_weights(bn.BayesNet(variables, nodes), scale=1.0)
        assert weights.weights == {"S1": pytest.approx(2.0), "S2": pytest.approx(1.0)}


def test_acceptance_03_inference_oracle_200_nets():
    with _Budget("inference vs joint enumeration (200 nets)", 60):
        rng = np.random.default_rng(2024)
        consistent = 0
        for _ in range(200):
            net = random_net(rng, int(rng.integers(3, 13)))
            evidence = random_evidence(rng, net)
            if oracle_evidence_prob(net, evidence) == 0.0:
                with pytest.raises(bn.InconsistentEvidenceError):
                    bn.infer_marginals(net, evidence, [net.variables[0].id])
                continue
            consistent += 1
            targets = [v.id for v in net.variables if v.id not in evidence]
            got = bn.infer_marginals(net, evidence, targets)
            for t in targets:
                want = oracle_marginal(net, evidence, t)
                np.testing.assert_allclose(got[t], want, atol=1e-9)
        assert consistent >= 150  # the vast majority of draws are consistent


def test_acceptance_04_noisy_or_equivalence():
    with _Budget("noisy-OR vs explicit-Z expansion (100 draws)", 30):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(1, 6))
            links = tuple(float(v) for v in rng.uniform(0, 1, size=n))
            leak = float(rng.uniform(0, 0.9))
            node = bn.NoisyOrNode("Y", tuple(f"X{i}" for i in range(n)), links, leak)
            got = bn.expand_noisy_or(node).table
            want = z_layer_noisy_or_cpt(links, leak)
            np.testing.assert_allclose(got, want, atol=1e-12)

        # structural parameter count: n + 1 stored reals versus 2^n expanded
        for n in range(1, 6):
            node = bn.NoisyOrNode(
                "Y", tuple(f"X{i}" for i in range(n)), tuple([0.5] * n), leak=0.05
            )
            variables = [
                bn.Variable(f"X{i}", bn.Role.SKILL, ("0", "1"), ordinal=True)
                for i in range(n)
            ] + [bn.Variable("Y", bn.Role.QUESTION, ("0", "1"))]
            roots = [bn.CptNode(f"X{i}", (), np.array([0.5, 0.5])) for i in range(n)]
            doc = bn.net_to_payload(bn.BayesNet(variables, roots + [node]))
            stored = next(r for r in doc["nodes"] if r["variable"] == "Y")
            assert len(stored["link_probs"]) + 1 == n + 1
            assert bn.expand_noisy_or(node).table[..., 1].size == 2**n


def test_acceptance_05_information_gain_properties():
    with _Budget("IG non-negativity + exhaustive selection match", 60):
        rng = np.random.default_rng(50)
        nets_checked = 0
        while nets_checked < 50:
            net = random_net(rng, int(rng.integers(4, 10)))
            questions = list(net.question_vars)
            if not questions:
                continue
            evidence = {}
            if len(questions) > 1 and rng.random() < 0.6:
                evidence = {questions[0]: int(rng.integers(0, 2))}
            candidates = [q for q in questions if q not in evidence]
            if not candidates:
                continue
            try:
                gains = bn.information_gains(net, evidence, candidates)
            except bn.InconsistentEvidenceError:
                continue
            nets_checked += 1
            assert all(ig >= -1e-9 for ig in gains.values())

        # greedy selection equals exhaustive branch enumeration, 2-skill/6-question net
        net = make_demo_net()
        evidence = {}
        for _ in range(6):
            candidates = [q for q in net.question_vars if q not in evidence]
            picked = bn.select_max_info_gain(net, evidence, candidates)
            gains = {
                q: oracle_skill_entropy(net, evidence)
                - oracle_expected_entropy(net, evidence, q)
                for q in candidates
            }
            best = max(gains.values())
            assert picked == next(q for q in candidates if gains[q] >= best - 1e-12)
            evidence[picked] = int(
                np.argmax(bn.infer_marginals(net, evidence, [picked])[picked])
            )


def _recovery_truth_net():
    variables = [
        bn.Variable("S", bn.Role.SKILL, ("low", "high"), ordinal=True),
    ] + [bn.Variable(f"Q{k}", bn.Role.QUESTION, ("0", "1")) for k in range(1, 5)]
    p_low = [0.20, 0.15, 0.30, 0.25]
    p_high = [0.85, 0.80, 0.90, 0.75]
    nodes = [bn.CptNode("S", (), np.array([0.4, 0.6]))] + [
        bn.CptNode(
            f"Q{k}",
            ("S",),
            np.array([[1 - lo, lo], [1 - hi, hi]]),
        )
        for k, (lo, hi) in enumerate(zip(p_low, p_high), start=1)
    ]
    return bn.BayesNet(variables, nodes)


def test_acceptance_06_em_monotonicity_and_recovery():
    with _Budget("EM monotonicity (20 runs) + hidden-skill recovery", 300):
        # monotone observed log-likelihood on 20 seeded runs with missing data
        for run in range(20):
            rng = np.random.default_rng(1000 + run)
            net = random_net(rng, int(rng.integers(4, 8)), noisy_or_share=0.0)
            questions = list(net.question_vars)
            if not questions:
                continue
            students = []
            for s in range(40):
                grades = [
                    int(rng.integers(0, 2)) if rng.random() < 0.75 else None
                    for _ in questions
                ]
                students.append(StudentRecord(id=f"s{s}", grades=tuple(grades)))
            dataset = ResponseDataset(item_ids=tuple(questions), students=tuple(students))
            result = bn.learn_em(net, dataset, bn.LearnConfig(max_iters=15))
            trace = result.loglik_trace
            assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:])), (
                f"log-likelihood decreased in run {run}"
            )

        # hidden-skill recovery from 5000 forward samples
        truth = _recovery_truth_net()
        cohort = sample_bn_cohort(truth, 5000, seed=77)
        init_nodes = [bn.CptNode("S", (), np.array([0.5, 0.5]))] + [
            bn.CptNode(f"Q{k}", ("S",), np.array([[0.6, 0.4], [0.4, 0.6]]))
            for k in range(1, 5)
        ]
        initial = truth.with_nodes(init_nodes)
        result = bn.learn_em(initial, cohort.dataset, bn.LearnConfig(max_iters=200))
        learned = result.net

        def question_tv(perm):
            worst = 0.0
            for k in range(1, 5):
                got = learned.nodes[f"Q{k}"].table[perm, :]
                want = truth.nodes[f"Q{k}"].table
                worst = max(worst, float(np.abs(got - want).sum(axis=-1).max()) / 2)
            return worst

        tv = min(question_tv([0, 1]), question_tv([1, 0]))
        assert tv <= 0.05, f"recovery TV {tv:.4f} exceeds 0.05"


def test_acceptance_07_irt_calibration_recovery():
    with _Budget("2PL calibration recovery (2000 x 30)", 300):
        rng = np.random.default_rng(4242)
        truth = [
            irt.IrtItemParams(a=float(rng.uniform(0.7, 2.0)), b=float(rng.uniform(-2, 2)))
            for _ in range(30)
        ]
        params_map = {f"q{i:02d}": p for i, p in enumerate(truth)}
        cohort = sample_irt_cohort(params_map, 2000, seed=4242)
        result = irt.calibrate_mml(cohort.dataset)

        trace = result.loglik_trace
        assert all(b >= a - 1e-6 for a, b in zip(trace, trace[1:])), "marginal LL not monotone"

        fitted = [result.params[qid] for qid in params_map]
        rmse_b = math.sqrt(np.mean([(f.b - t.b) ** 2 for f, t in zip(fitted, truth)]))
        rmse_a = math.sqrt(np.mean([(f.a - t.a) ** 2 for f, t in zip(fitted, truth)]))
        print(f"  RMSE(b)={rmse_b:.3f} RMSE(a)={rmse_a:.3f}")
        assert rmse_b <= 0.25, f"RMSE(b) {rmse_b:.3f} > 0.25"
        assert rmse_a <= 0.30, f"RMSE(a) {rmse_a:.3f} > 0.30"


def test_acceptance_08_nn_gradient_check_and_toy_regression():
    with _Budget("NN gradient check + toy regression", 120):
        spec = nn.NetworkSpec(input_size=3, hidden_layers=(4,))
        rng = np.random.default_rng(8)
        x = rng.uniform(-1, 1, size=(6, 3))
        y = rng.uniform(0, 1, size=6)
        worst = 0.0
        for draw in range(10):
            weights = nn.init_weights(spec, seed=500 + draw)
            _, gw, gb = nn.loss_and_gradients(weights, spec, x, y)
            nw, nb = numeric_gradients(weights, spec, x, y)
            for analytic, numeric in zip(gw + gb, nw + nb):
                denom = np.maximum(np.abs(numeric), 1e-6)
                worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
        print(f"  max relative gradient error {worst:.2e}")
        assert worst < 1e-4

        rows = [[a, b] for a in (0, 1) for b in (0, 1)] * 8
        targets = [a + b for a, b in rows]
        result = nn.train_backprop(
            nn.NetworkSpec(input_size=2, hidden_layers=(4,)),
            nn.AnswerEncoding(scheme="zero_one"),
            rows,
            targets,
            nn.TrainConfig(epochs=2000, learning_rate=0.5, seed=0, val_fraction=0.0),
        )
        print(f"  toy regression final MSE {result.train_loss[-1]:.5f}")
        assert result.train_loss[-1] < 0.01


def test_acceptance_09_cat_efficiency():
    with _Budget("adaptive vs random questions-to-stop (100 items, 200 examinees)", 180):
        rng = np.random.default_rng(918)
        params = {
            f"q{i:03d}": irt.IrtItemParams(
                a=float(rng.uniform(0.8, 2.0)), b=float(rng.standard_normal()), c=0.2
            )
            for i in range(100)
        }
        cohort = sample_irt_cohort(params, 200, seed=918)

        def factory():
            return IrtStudentModel(params, cohort.bank)

        report = compare_policies(
            factory,
            cohort.bank,
            cohort,
            [se_threshold(0.35)],
            policies=("adaptive", "random"),
            seed=918,
        )
        adaptive_median = report.policies["adaptive"].quartiles[1]
        random_median = report.policies["random"].quartiles[1]
        ratio = adaptive_median / random_median
        print(
            f"  median questions-to-stop: adaptive {adaptive_median:.1f}, "
            f"random {random_median:.1f} (ratio {ratio:.2f})"
        )
        assert adaptive_median < random_median


def _random_session_models(seed):
    rng = np.random.default_rng(seed)
    kind = ("irt", "bn", "nn")[seed % 3]
    if kind == "irt":
        n = int(rng.integers(3, 8))
        params = {
            f"q{i}": irt.IrtItemParams(
                a=float(rng.uniform(0.5, 2.5)), b=float(rng.uniform(-2, 2))
            )
            for i in range(n)
        }
        bank = QuestionBank(items=tuple(Item(id=q) for q in params))
        return IrtStudentModel(params, bank), bank
    if kind == "bn":
        net = make_demo_net()
        bank = QuestionBank(items=tuple(Item(id=q) for q in net.question_vars))
        return BnStudentModel(net), bank
    n = int(rng.integers(3, 8))
    ids = [f"q{i}" for i in range(n)]
    spec = nn.NetworkSpec(input_size=n, hidden_layers=(3,))
    weights = nn.init_weights(spec, seed=seed)
    probs = {i: {0: 0.5, 1: 0.5} for i in range(n)}
    model = NnStudentModel(spec, weights, nn.AnswerEncoding(), ids, probs)
    return model, QuestionBank(items=tuple(Item(id=q) for q in ids))


def test_acceptance_10_engine_invariants():
    with _Budget("1000 seeded sessions without repeats + service equivalence", 300):
        for seed in range(1000):
            rng = np.random.default_rng(seed)
            model, bank = _random_session_models(seed)
            limit = int(rng.integers(0, len(bank.items) + 1))
            session = TestSession(model, bank, [max_questions(limit)])
            transcript = run_scripted(session, lambda q, r=rng: int(r.integers(0, 2)))
            asked = [rec.question_id for rec in transcript.records]
            assert len(set(asked)) == len(asked), f"repeat in session {seed}"
            assert set(asked) | set(session.remaining) == set(bank.item_ids)
            assert not (set(asked) & set(session.remaining))
            assert len(asked) <= limit

        # scripted HTTP client reproduces run_scripted byte for byte
        from fastapi.testclient import TestClient

        from adaptest.service import ModelStore, ServiceSettings, create_app

        rng = np.random.default_rng(31415)
        params = {
            f"q{i}": irt.IrtItemParams(
                a=float(rng.uniform(0.8, 2.0)), b=float(rng.uniform(-1.5, 1.5))
            )
            for i in range(6)
        }
        bank = QuestionBank(items=tuple(Item(id=q, text=q) for q in params))
        payload = irt.params_to_payload(params)
        store = ModelStore()
        store.register("m", make_envelope("irt", payload), bank)
        client = TestClient(create_app(store, ServiceSettings(transcript_access="always")))
        answers = {f"q{i}": int(rng.integers(0, 2)) for i in range(6)}

        body = client.post("/sessions", json={"model_id": "m"}).json()
        sid = body["session_id"]
        while body["state"] == "running":
            qid = body["current_question"]["id"]
            body = client.post(
                f"/sessions/{sid}/answers",
                json={"question_id": qid, "outcome": answers[qid]},
            ).json()
        via_http = client.get(f"/sessions/{sid}/transcript").json()

        direct = run_scripted(
            TestSession(IrtStudentModel(params, bank), bank, []), lambda q: answers[q]
        ).to_payload()
        assert json.dumps(via_http, sort_keys=True) == json.dumps(direct, sort_keys=True)


def test_acceptance_11_persistence_round_trip():
    with _Budget("round-trip persistence (100 randomized instances)", 120):
        from test_persistence import PAYLOAD_MAKERS

        rng = np.random.default_rng(606)
        made = 0
        for i in range(75):
            kind = ("irt", "bn", "nn")[i % 3]
            payload = PAYLOAD_MAKERS[kind](rng)
            envelope = make_envelope(kind, payload, seed=i)
            import tempfile, os

            with tempfile.TemporaryDirectory() as d:
                path = os.path.join(d, "m.model.json")
                save_model(envelope, path)
                loaded = load_model(path)
            assert loaded.model_kind == kind
            assert loaded.payload == json.loads(json.dumps(payload))
            made += 1

        # 25 random transcripts through the same envelope JSON discipline
        for i in range(25):
            records = tuple(
                TranscriptStep(
                    step=s + 1,
                    question_id=f"q{int(rng.integers(0, 50))}",
                    outcome=int(rng.integers(0, 2)),
                    estimate=EstimateView(
                        kind="theta",
                        value=float(rng.standard_normal()),
                        uncertainty=float(rng.uniform(0.01, 2.0)),
                        expected_score=float(rng.uniform(0, 120)),
                    ),
                )
                for s in range(int(rng.integers(1, 8)))
            )
            transcript = Transcript(
                records=records,
                final_estimate=records[-1].estimate,
                stop_reason="max_questions",
            )
            doc = json.loads(json.dumps(transcript.to_payload()))
            assert Transcript.from_payload(doc) == transcript
            made += 1
        assert made == 100
