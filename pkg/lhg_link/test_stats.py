from lhg_link.stats import metrics_table, print_table


def test_metrics_table_blanks_unmeasured_columns(tmp_path):
    reports = [
        {"dataset": "toy", "variant": "full", "seed": 0, "map": 0.5, "ndcg": 0.6, "macro_f": None, "fingerprint": "x"},
        {"dataset": "toy", "variant": "TransE", "seed": 0, "map": 0.4, "ndcg": 0.5, "macro_f": None, "fingerprint": "x"},
    ]
    df = metrics_table(reports)
    assert list(df.columns) == ["dataset", "variant", "seed", "map", "ndcg", "macro_f"]
    assert df["macro_f"].tolist() == ["", ""]
    text = print_table(df, title="toy", dst_path=tmp_path / "table.txt", show_index=False)
    assert text.startswith("toy\n")
    assert "TransE" in text
    assert (tmp_path / "table.txt").read_text(encoding="utf-8") == text
