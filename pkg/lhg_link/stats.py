from pathlib import Path
from typing import Optional

import pandas
from tabulate import tabulate


def format_table(df: pandas.DataFrame, show_index: bool = True) -> str:
    return tabulate(
        df,
        headers="keys",
        showindex="always" if show_index else "never",
        tablefmt="pretty",
        stralign="left",
        numalign="right",
    )


def print_table(
    df: pandas.DataFrame,
    title: Optional[str] = None,
    dst_path: Optional[Path] = None,
    show_index: bool = True,
) -> str:
    """Prints the table and, when `dst_path` is given, writes the same text next to the JSON reports."""
    output_str = format_table(df, show_index=show_index)
    if title:
        output_str = f"{title}\n{output_str}"
    output_str = output_str + "\n"
    print(output_str)
    if dst_path is not None:
        dst_path.parent.mkdir(parents=True, exist_ok=True)
        with open(str(dst_path), "w", encoding="utf-8") as f_out:
            f_out.write(output_str)
    return output_str


def metrics_table(reports) -> pandas.DataFrame:
    """One row per metrics report, blank where a metric was not measured."""
    columns = ["dataset", "variant", "seed", "map", "ndcg", "macro_f", "accuracy"]
    df = pandas.DataFrame(list(reports))
    return df[[c for c in columns if c in df.columns]].fillna(value="")
