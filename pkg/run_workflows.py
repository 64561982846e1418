from pathlib import Path

from lhg_link.workflow import (
    run_ablate,
    run_baseline,
    run_config_from_workbook,
    run_eval,
    run_prepare,
    run_probe,
    run_scaling,
    run_train,
)
import experiment_example as experiment_workbook

BASE_DIR = Path(__file__).parent


def _run_config():
    return run_config_from_workbook(base_dir=BASE_DIR, workbook_ptr=experiment_workbook)


def test_prepare():
    run_prepare(_run_config())


def test_train_and_eval():
    run = _run_config()
    run_train(run)
    run_eval(run, which="test")


def test_probe():
    run_probe(_run_config())


def test_ablation():
    run_ablate(_run_config(), seeds=experiment_workbook.ABLATION_SEEDS)


def test_baselines():
    run_baseline(_run_config(), pseudo_ks=experiment_workbook.PSEUDO_KS)


def test_scaling():
    run_scaling(_run_config(), sizes=experiment_workbook.SCALING_SIZES)
