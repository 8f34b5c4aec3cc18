import json

import pytest

from logdense import cli
from logdense.topology import Topology


def run(capsysbinary, *argv):
    code = cli.main(list(argv))
    out = capsysbinary.readouterr()
    return code, out.out.decode(), out.err.decode()


def test_generate_json_edge_count(capsysbinary):
    code, out, _ = run(capsysbinary, "generate", "--scheme", "logdense-v1", "--layers", "24")
    assert code == 0
    assert Topology.from_json(out).num_edges == 94


def test_generate_dense_l2(capsysbinary):
    _, out, _ = run(capsysbinary, "generate", "--scheme", "dense", "--layers", "2")
    assert sum(len(v) for v in json.loads(out)["inputs"].values()) == 3


def test_generate_dot(capsysbinary):
    _, out, _ = run(capsysbinary, "generate", "--scheme", "dense", "--layers", "2", "--format", "dot")
    assert out.startswith("digraph") and out.count("->") == 3 and out.rstrip().endswith("}")


def test_bad_flags_exit_2(capsysbinary):
    with pytest.raises(SystemExit) as info:
        cli.main(["generate", "--scheme", "bogus", "--layers", "4"])
    assert info.value.code == 2
    code, _, err = run(capsysbinary, "generate", "--scheme", "dense", "--layers", "4", "--blocks", "2,3")
    assert code == 2 and "do not sum" in err


@pytest.fixture
def topo_file(tmp_path):
    def make(scheme, L):
        from logdense.topology import generate

        path = tmp_path / f"{scheme}-{L}.json"
        path.write_text(generate(scheme, L).to_json())
        return str(path)

    return make


def test_render_l1(capsysbinary, topo_file):
    _, out, _ = run(capsysbinary, "render", topo_file("dense", 1))
    assert out.split() == ["P2", "2", "2", "1", "1", "1", "0", "1"]


def test_render_dense_lower_triangle(capsysbinary, topo_file):
    _, out, _ = run(capsysbinary, "render", topo_file("dense", 24), "--format", "ascii")
    rows = out.splitlines()
    assert len(rows) == 25
    for i, row in enumerate(rows):
        assert row == "#" * i + "." * (25 - i)


def test_render_v1_stripes(capsysbinary, topo_file):
    _, out, _ = run(capsysbinary, "render", topo_file("logdense-v1", 24), "--format", "ascii")
    rows = out.splitlines()
    for i in range(1, 25):
        cols = {j for j, ch in enumerate(rows[i]) if ch == "#"}
        assert cols == {i - (1 << k) for k in range(i.bit_length())}


def test_render_malformed(capsysbinary, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsysbinary, "render", str(bad))[0] == 2
    assert run(capsysbinary, "render", str(tmp_path / "missing.json"))[0] == 2


def test_analyze(capsysbinary, topo_file):
    _, out, _ = run(capsysbinary, "analyze", topo_file("logdense-v1", 64))
    v1 = json.loads(out)["bd"]["mbd"]
    assert v1 <= 7
    _, out, _ = run(capsysbinary, "analyze", topo_file("nearest", 64))
    assert json.loads(out)["bd"]["mbd"] > v1
    _, out, _ = run(capsysbinary, "analyze", topo_file("dense", 10), "--format", "csv")
    header, row = out.splitlines()
    assert dict(zip(header.split(","), row.split(",")))["mbd"] == "1"


def test_cost_table_row_and_blocks(capsysbinary):
    _, out, _ = run(capsysbinary, "cost", "--blocks-report", "--format", "json")
    doc = json.loads(out)
    assert len(doc["block_fractions"]) == 11
    assert abs(sum(doc["block_fractions"]) - 1) < 1e-9
    assert 0.8 * 42.0e9 <= doc["total_flops"] <= 1.2 * 42.0e9
    _, text, _ = run(capsysbinary, "cost", "--arch", "fc-densenet-103")
    assert text.startswith("FC-DenseNet103") and "GFLOPS" in text


def test_cost_resolution_scaling(capsysbinary):
    _, a, _ = run(capsysbinary, "cost", "--format", "json", "--resolution", "224")
    _, b, _ = run(capsysbinary, "cost", "--format", "json", "--resolution", "448")
    assert json.loads(b)["total_flops"] == 4 * json.loads(a)["total_flops"]


def test_cost_from_topology_file(capsysbinary, topo_file):
    code, out, _ = run(capsysbinary, "cost", "--arch", topo_file("loglog", 16), "--hub-multiplier", "3", "--format", "csv")
    assert code == 0 and out.startswith("name,")


def test_verify_exit_codes(capsysbinary):
    code, out, _ = run(capsysbinary, "verify", "--prop1", "--layers", "16,32", "--n-blocks", "1,2,3,4")
    assert code == 0 and len(out.splitlines()) == 9
    code, _, _ = run(capsysbinary, "verify", "--prop2", "--layers", "16,64")
    assert code == 0
    # L=16 sits below the [3, 4] band
    code, out, _ = run(capsysbinary, "verify", "--fig6a", "--layers", "16")
    assert code == 1 and out.splitlines()[0].startswith("L,mean_min1")


def test_gradcheck_command(capsysbinary):
    code, out, _ = run(capsysbinary, "gradcheck", "--scheme", "logdense-v1", "--layers", "8")
    doc = json.loads(out)
    assert code == 0 and doc["pass"] and doc["max_rel_err"] < 1e-4
    code, _, err = run(capsysbinary, "gradcheck", "--scheme", "logdense-v1", "--layers", "80")
    assert code == 2 and "desk limit" in err


def test_int_list():
    assert cli.int_list("16-18,32") == [16, 17, 18, 32]
    assert cli.even_blocks(10, 3) == (4, 3, 3)


def test_out_writes_manifest_and_is_deterministic(tmp_path, capsysbinary):
    digests = []
    for n in range(2):
        out = tmp_path / f"run{n}" / "t.json"
        out.parent.mkdir()
        assert cli.main(["generate", "--scheme", "loglog", "--layers", "40", "--out", str(out)]) == 0
        manifest = json.loads((out.parent / "t.json.manifest.json").read_text())
        digests.append(manifest["outputs"]["t.json"])
        assert manifest["command"] == "generate" and "version" in manifest
        assert "out" not in manifest["arguments"]
    assert digests[0] == digests[1]
    assert capsysbinary.readouterr().out == b""
