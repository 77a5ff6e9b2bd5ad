"""End-to-end checks of the command-line interface.

Commands run in process through cli.main(argv); all files live under
pytest tmp_path directories.
"""

import csv
import json
import re

import numpy as np

from noisyrca import cli
from noisyrca.dag import save_graph
from noisyrca.mechanism import load_dataset, load_model, model_to_json, save_dataset

from .conftest import chain_dag

RANK_LINE = re.compile(r"^\s*(\d+)\.\s+(node|edge)\s+(\S+)\s+score=")


def gen_case(root, name: str, *args: str):
    out = root / name
    out.mkdir()
    rc = cli.main(["generate", *args, "--out", str(out)])
    assert rc == 0
    return out


def fit_case(case_dir, out_name: str = "model.json") -> str:
    model_path = str(case_dir / out_name)
    rc = cli.main(
        [
            "fit",
            "--graph",
            str(case_dir / "graph.json"),
            "--data",
            str(case_dir / "normal.csv"),
            "--out",
            model_path,
        ]
    )
    assert rc == 0
    return model_path


def printed_ranking(stdout: str) -> list[tuple[str, str]]:
    """(kind, label) pairs in printed order."""
    entries = []
    for line in stdout.splitlines():
        m = RANK_LINE.match(line)
        if m:
            entries.append((m.group(2), m.group(3)))
    return entries


def test_generate_twice_is_byte_identical(tmp_path, capsys):
    args = (
        "random",
        "--nodes",
        "20",
        "--seed",
        "7",
        "--mix",
        "both",
        "--normal-rows",
        "150",
        "--abnormal-rows",
        "5",
    )
    first = gen_case(tmp_path, "a", *args)
    second = gen_case(tmp_path, "b", *args)
    out = capsys.readouterr().out
    assert "scenario=random seed=7 mix=both" in out
    for name in ("graph.json", "normal.csv", "abnormal.csv", "truth.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_generate_supplychain_seed_1_has_one_or_two_causes(tmp_path):
    case = gen_case(tmp_path, "sc", "supplychain", "--seed", "1")
    truth = json.loads((case / "truth.json").read_text())
    total = len(truth["node_causes"]) + len(truth["edge_causes"])
    assert 1 <= total <= 2
    assert truth["scenario"] == "supply_chain"


def test_generate_missing_out_dir_writes_nothing(tmp_path, capsys):
    out = tmp_path / "missing" / "deep"
    rc = cli.main(
        ["generate", "random", "--nodes", "10", "--seed", "0", "--out", str(out)]
    )
    assert rc == 2
    assert "does not exist" in capsys.readouterr().err
    assert not out.exists()


def test_fit_round_trips_all_fields(tmp_path):
    case = gen_case(
        tmp_path,
        "c",
        "random",
        "--nodes",
        "10",
        "--seed",
        "3",
        "--normal-rows",
        "200",
        "--abnormal-rows",
        "5",
    )
    model_path = fit_case(case)
    raw = json.loads((case / "model.json").read_text())
    assert model_to_json(load_model(model_path)) == raw


def test_fit_residuals_have_zero_mean(tmp_path):
    case = gen_case(
        tmp_path,
        "c",
        "random",
        "--nodes",
        "12",
        "--seed",
        "5",
        "--normal-rows",
        "400",
        "--abnormal-rows",
        "5",
    )
    fit_case(case)
    raw = json.loads((case / "model.json").read_text())
    _, data = load_dataset(str(case / "normal.csv"))
    checked = 0
    for entry in raw["nodes"]:
        parents = entry["parents"]
        if not parents:
            continue
        w = np.asarray(entry["posterior_mean"], dtype=float)
        res = data[:, entry["node"]] - data[:, parents] @ w
        se = res.std(ddof=1) / np.sqrt(len(res))
        assert abs(res.mean()) < 5.0 * se
        checked += 1
    assert checked > 0


def test_fit_rejects_mismatched_columns(tmp_path, capsys):
    case = gen_case(
        tmp_path,
        "c",
        "random",
        "--nodes",
        "10",
        "--seed",
        "2",
        "--normal-rows",
        "80",
        "--abnormal-rows",
        "5",
    )
    lines = (case / "normal.csv").read_text().splitlines(keepends=True)
    lines[0] = lines[0].replace("X0", "Y0", 1)
    bad = case / "renamed.csv"
    bad.write_text("".join(lines))
    rc = cli.main(
        [
            "fit",
            "--graph",
            str(case / "graph.json"),
            "--data",
            str(bad),
            "--out",
            str(case / "model.json"),
        ]
    )
    assert rc == 2
    assert "columns" in capsys.readouterr().err


def test_attribute_naive_is_deterministic(tmp_path, capsys):
    case = gen_case(
        tmp_path,
        "c",
        "random",
        "--nodes",
        "12",
        "--seed",
        "4",
        "--normal-rows",
        "300",
        "--abnormal-rows",
        "5",
    )
    model_path = fit_case(case)
    truth = json.loads((case / "truth.json").read_text())
    reports = []
    for name in ("r1.json", "r2.json"):
        rc = cli.main(
            [
                "attribute",
                "--model",
                model_path,
                "--abnormal",
                str(case / "abnormal.csv"),
                "--target",
                str(truth["target"]),  # numeric id form
                "--method",
                "naive",
                "--out",
                str(case / name),
            ]
        )
        assert rc == 0
        reports.append((case / name).read_bytes())
    assert reports[0] == reports[1]
    out = capsys.readouterr().out
    assert f"method=naive target={truth['target_name']} rows=5" in out
    ranked = printed_ranking(out)
    assert ranked and ranked[0][0] == "node"
    payload = json.loads(reports[0])
    assert payload["method"] == "naive"
    assert payload["target"] == truth["target"]


def test_attribute_requires_seed_for_stochastic(tmp_path, capsys):
    case = gen_case(
        tmp_path, "c", "random", "--nodes", "10", "--seed", "0",
        "--normal-rows", "80", "--abnormal-rows", "5",
    )
    model_path = fit_case(case)
    rc = cli.main(
        [
            "attribute",
            "--model",
            model_path,
            "--abnormal",
            str(case / "abnormal.csv"),
            "--target",
            "0",
            "--method",
            "bigen",
            "--reference-data",
            str(case / "normal.csv"),
            "--out",
            str(case / "r.json"),
        ]
    )
    assert rc == 2
    assert "--seed is required" in capsys.readouterr().err


def test_attribute_requires_reference_data(tmp_path, capsys):
    case = gen_case(
        tmp_path, "c", "random", "--nodes", "10", "--seed", "0",
        "--normal-rows", "80", "--abnormal-rows", "5",
    )
    model_path = fit_case(case)
    rc = cli.main(
        [
            "attribute",
            "--model",
            model_path,
            "--abnormal",
            str(case / "abnormal.csv"),
            "--target",
            "0",
            "--method",
            "bigen",
            "--seed",
            "1",
            "--out",
            str(case / "r.json"),
        ]
    )
    assert rc == 2
    assert "--reference-data" in capsys.readouterr().err


def test_attribute_rejects_unknown_target_name(tmp_path, capsys):
    case = gen_case(
        tmp_path, "c", "random", "--nodes", "10", "--seed", "0",
        "--normal-rows", "80", "--abnormal-rows", "5",
    )
    model_path = fit_case(case)
    rc = cli.main(
        [
            "attribute",
            "--model",
            model_path,
            "--abnormal",
            str(case / "abnormal.csv"),
            "--target",
            "nosuch",
            "--method",
            "naive",
            "--out",
            str(case / "r.json"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err


def test_attribute_shapley_refuses_25_player_subgraph(tmp_path, capsys):
    # the leaf of a 25-chain plays together with its 24 ancestors, past
    # the exact engine's hard cap when no --early-stop is given
    dag = chain_dag(25)
    rng = np.random.default_rng(0)
    data = np.empty((300, 25))
    data[:, 0] = rng.normal(size=300)
    for j in range(1, 25):
        data[:, j] = data[:, j - 1] + rng.normal(size=300)
    save_graph(dag, str(tmp_path / "graph.json"))
    save_dataset(str(tmp_path / "normal.csv"), data, dag.names)
    save_dataset(str(tmp_path / "abnormal.csv"), data[:5] + 3.0, dag.names)
    rc = cli.main(
        [
            "fit",
            "--graph",
            str(tmp_path / "graph.json"),
            "--data",
            str(tmp_path / "normal.csv"),
            "--out",
            str(tmp_path / "model.json"),
        ]
    )
    assert rc == 0
    rc = cli.main(
        [
            "attribute",
            "--model",
            str(tmp_path / "model.json"),
            "--abnormal",
            str(tmp_path / "abnormal.csv"),
            "--target",
            "X24",
            "--method",
            "shapley",
            "--reference-data",
            str(tmp_path / "normal.csv"),
            "--seed",
            "0",
            "--out",
            str(tmp_path / "r.json"),
        ]
    )
    assert rc == 4
    assert capsys.readouterr().err.startswith("attribution error:")
    assert not (tmp_path / "r.json").exists()


def test_attribute_bigen_ranks_injected_edge_in_top3(tmp_path, capsys):
    hits = 0
    for seed in range(20):
        case = gen_case(
            tmp_path,
            f"case{seed}",
            "random",
            "--nodes",
            "15",
            "--mix",
            "edges",
            "--seed",
            str(seed),
            "--normal-rows",
            "1000",
            "--abnormal-rows",
            "10",
        )
        model_path = fit_case(case)
        truth = json.loads((case / "truth.json").read_text())
        names = json.loads((case / "graph.json").read_text())["nodes"]
        labels = {
            f"{names[i]}->{names[j]}" for i, j, _ in truth["edge_causes"]
        }
        capsys.readouterr()
        rc = cli.main(
            [
                "attribute",
                "--model",
                model_path,
                "--abnormal",
                str(case / "abnormal.csv"),
                "--target",
                truth["target_name"],
                "--method",
                "bigen",
                "--reference-data",
                str(case / "normal.csv"),
                "--seed",
                str(seed),
                "--out",
                str(case / "report.json"),
            ]
        )
        assert rc == 0
        ranked = printed_ranking(capsys.readouterr().out)
        if any(k == "edge" and lbl in labels for k, lbl in ranked[:3]):
            hits += 1
    assert hits >= 11  # majority of the 20 seeds


def test_evaluate_writes_stable_table(tmp_path, capsys):
    cases = tmp_path / "cases"
    cases.mkdir()
    for i, nodes in enumerate((10, 12)):
        gen_case(
            cases,
            f"c{i}",
            "random",
            "--nodes",
            str(nodes),
            "--seed",
            str(i),
            "--normal-rows",
            "150",
            "--abnormal-rows",
            "5",
        )
    tables = []
    for name in ("t1.csv", "t2.csv"):
        capsys.readouterr()
        rc = cli.main(
            [
                "evaluate",
                "--cases",
                str(cases),
                "--methods",
                "naive,bigen",
                "--seed",
                "0",
                "--out",
                str(tmp_path / name),
            ]
        )
        assert rc == 0
        tables.append((tmp_path / name).read_bytes())
    assert tables[0] == tables[1]
    out = capsys.readouterr().out
    assert "NDCG@5 over 2 cases" in out
    with open(tmp_path / "t1.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["method", "k", "variant", "mean", "std", "cases"]
    methods = {r[0] for r in rows[1:]}
    assert methods == {"naive", "bigen"}
    assert all(r[5] == "2" for r in rows[1:])


def test_evaluate_rejects_empty_cases_dir(tmp_path, capsys):
    empty = tmp_path / "cases"
    empty.mkdir()
    rc = cli.main(
        [
            "evaluate",
            "--cases",
            str(empty),
            "--methods",
            "naive",
            "--seed",
            "0",
            "--out",
            str(tmp_path / "t.csv"),
        ]
    )
    assert rc == 2
    assert capsys.readouterr().err


def test_evaluate_rejects_unknown_method(tmp_path, capsys):
    cases = tmp_path / "cases"
    cases.mkdir()
    gen_case(
        cases, "c0", "random", "--nodes", "10", "--seed", "0",
        "--normal-rows", "80", "--abnormal-rows", "5",
    )
    rc = cli.main(
        [
            "evaluate",
            "--cases",
            str(cases),
            "--methods",
            "naive,bogus",
            "--seed",
            "0",
            "--out",
            str(tmp_path / "t.csv"),
        ]
    )
    assert rc == 2
    assert "unknown method" in capsys.readouterr().err


def test_bench_records_deterministic_counts(tmp_path, capsys):
    runs = []
    for name in ("b1.csv", "b2.csv"):
        capsys.readouterr()
        rc = cli.main(
            [
                "bench",
                "--sizes",
                "4,6",
                "--methods",
                "naive,bigen",
                "--budget",
                "5.0",
                "--seed",
                "0",
                "--out",
                str(tmp_path / name),
            ]
        )
        assert rc == 0
        with open(tmp_path / name, newline="") as fh:
            runs.append(list(csv.reader(fh)))
    assert "slope" in capsys.readouterr().out
    header, rows = runs[0][0], runs[0][1:]
    assert header == ["method", "nodes", "edges", "seconds", "evals", "status"]
    assert len(rows) == 4  # 2 methods x 2 sizes
    assert all(r[5] == "ok" for r in rows)
    # wall time varies between runs; everything else must not
    stripped = [
        [[c for i, c in enumerate(row) if i != 3] for row in run] for run in runs
    ]
    assert stripped[0] == stripped[1]
