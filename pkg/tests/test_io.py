import numpy as np
import pytest

from threegroups import io
from threegroups.model import GwasDataset, RnaSeqDataset
from threegroups.trace import Trace, summarize


def test_config_hash_stable_and_order_free():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_fmt():
    assert io.fmt(float("nan")) == "NA"
    assert io.fmt(True) == "1"
    assert io.fmt(np.int64(3)) == "3"
    assert float(io.fmt(0.1)) == 0.1


def test_table_round_trip_csv_and_tsv(tmp_path):
    for name in ("t.tsv", "t.csv"):
        p = io.write_table(tmp_path / name, ["id", "x"], [("a", 1.5), ("b", 2)], "test", "h1")
        assert p.read_text().splitlines()[0] == "# threegroups schema=1 kind=test config=h1"
        cols, rows = io.read_table(p)
        assert cols == ["id", "x"] and rows == [["a", "1.5"], ["b", "2"]]
        assert io.read_table_header(p) == {"schema": "1", "kind": "test", "config": "h1"}


def test_read_table_errors(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("a\tb\n1\n")
    with pytest.raises(ValueError, match="row 2"):
        io.read_table(p)
    p.write_text("a\tb\n1\tNA\n")
    with pytest.raises(ValueError, match="missing"):
        io.read_table(p)
    p.write_text("")
    with pytest.raises(ValueError, match="empty"):
        io.read_table(p)


def test_counts_reject_negative(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("gene_id\ts1\ng1\t-1\n")
    with pytest.raises(ValueError, match="non-negative"):
        io.read_counts(p)


def test_rna_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = RnaSeqDataset(rng.poisson(5, (4, 3)), [0, 0, 1, 1], rng.normal(size=4), rng.normal(size=3),
                       ["a", "b", "c"], rng.normal(size=(4, 2)), ["s1", "s2", "s3", "s4"])
    io.save_rna_dataset(tmp_path, ds)
    back = io.load_rna_dataset(tmp_path / "rna_counts.tsv", tmp_path / "rna_samples.tsv",
                               tmp_path / "rna_genes.tsv", tmp_path / "rna_covariates.tsv")
    assert np.array_equal(back.counts, ds.counts)
    assert np.array_equal(back.log_library_size, ds.log_library_size)
    assert np.array_equal(back.log_gene_length, ds.log_gene_length)
    assert np.array_equal(back.covariates, ds.covariates)
    assert back.gene_ids == ds.gene_ids


def test_gwas_dataset_round_trip_and_reorder(tmp_path):
    ds = GwasDataset([0, 1, 1], [[0, 1], [1, 1], [0, 0]], ["A", "B"], individual_ids=["i1", "i2", "i3"])
    io.save_gwas_dataset(tmp_path, ds)
    samples = tmp_path / "gwas_samples.tsv"
    lines = samples.read_text().splitlines()
    samples.write_text("\n".join([lines[0], lines[1], lines[4], lines[2], lines[3]]) + "\n")
    back = io.load_gwas_dataset(samples, tmp_path / "gwas_carriers.tsv")
    assert back.individual_ids == ["i3", "i1", "i2"]
    assert back.carrier.tolist() == [[0, 0], [0, 1], [1, 1]]
    assert back.outcome.tolist() == [1, 0, 1]


def test_gwas_from_genotypes(tmp_path):
    (tmp_path / "s.tsv").write_text("individual_id\toutcome\ni1\t1\ni2\t0\n")
    (tmp_path / "g.tsv").write_text("individual_id\tv1\tv2\ni1\t0\t2\ni2\t0\t0\n")
    (tmp_path / "m.tsv").write_text("variant\tgene\nv1\tA\nv2\tA\n")
    ds = io.load_gwas_dataset(tmp_path / "s.tsv", genotypes=tmp_path / "g.tsv", variant_map=tmp_path / "m.tsv")
    assert ds.gene_ids == ["A"] and ds.carrier[:, 0].tolist() == [1, 0]


def test_missing_ids_reported(tmp_path):
    (tmp_path / "s.tsv").write_text("individual_id\toutcome\ni1\t1\ni9\t0\n")
    (tmp_path / "c.tsv").write_text("individual_id\tA\ni1\t1\ni2\t0\n")
    with pytest.raises(ValueError, match="i9"):
        io.load_gwas_dataset(tmp_path / "s.tsv", tmp_path / "c.tsv")


def test_truth_and_summary_files(tmp_path):
    io.write_truth(tmp_path / "truth.tsv", ["a", "b"], [1, 3], [0.0, -1.0], [0.0, -0.5])
    ids, labels = io.read_truth(tmp_path / "truth.tsv")
    assert ids == ["a", "b"] and labels.tolist() == [1, 3]
    s = summarize(Trace.from_arrays(["a", "b"], [[1, 3], [1, 3]], {"gwas": [[0, -1.0], [0, -1.0]]}))
    io.write_summary(tmp_path / "summary.tsv", s)
    ids, p = io.read_summary_probs(tmp_path / "summary.tsv")
    assert ids == ["a", "b"] and p.tolist() == [1.0, 0.0]
    with pytest.raises(ValueError):
        io.read_truth(tmp_path / "summary.tsv")
