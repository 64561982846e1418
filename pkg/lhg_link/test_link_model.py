import numpy
import pytest

from lhg_link import diff_engine as de
from lhg_link.common import ConfigurationError, ContractError
from lhg_link.graph_store import Triplet
from lhg_link.link_model import (
    LinkEncoderParams,
    LossConfig,
    encode_link,
    film_reg,
    init_link_params,
    score,
    score_values,
    task_loss,
    total_loss,
)


def _on_tape(tape, params: LinkEncoderParams) -> LinkEncoderParams:
    return LinkEncoderParams(W=tape.leaf(params.W), U=tape.leaf(params.U), b=tape.leaf(params.b))


def test_zero_encoder_gives_zero_translation():
    tape = de.Tape()
    params = _on_tape(tape, LinkEncoderParams(W=numpy.zeros((3, 2)), U=numpy.zeros((3, 2)), b=numpy.zeros(3)))
    s_a = tape.constant(numpy.random.default_rng(0).normal(size=(5, 2)))
    s_b = tape.constant(numpy.random.default_rng(1).normal(size=(5, 2)))
    numpy.testing.assert_array_equal(encode_link(s_a, s_b, params).values, numpy.zeros((5, 3)))


def test_encoder_is_asymmetric_and_bounded():
    tape = de.Tape()
    params = _on_tape(tape, init_link_params(4, 3, numpy.random.default_rng(2)))
    rng = numpy.random.default_rng(3)
    s_a = tape.constant(5.0 * rng.normal(size=(6, 3)))
    s_b = tape.constant(5.0 * rng.normal(size=(6, 3)))
    forward_pair = encode_link(s_a, s_b, params).values
    assert not numpy.allclose(forward_pair, encode_link(s_b, s_a, params).values)
    assert numpy.all(numpy.abs(forward_pair) < 1.0)


def test_score_examples():
    tape = de.Tape()
    h_x, h_y = tape.constant([[1.0, 0.0]]), tape.constant([[0.0, 1.0]])
    assert score(h_x, h_y).item() == pytest.approx(-numpy.sqrt(2.0))
    assert score(h_x, h_y, tape.constant([[-1.0, 1.0]])).item() == 0.0
    assert score_values(numpy.array([1.0, 0.0]), numpy.array([0.0, 1.0])) == pytest.approx(-numpy.sqrt(2.0))


def test_score_ranking_survives_rotation():
    rng = numpy.random.default_rng(4)
    h_x, h_y, s = rng.normal(size=(3, 10, 4))
    rotation, _ = numpy.linalg.qr(rng.normal(size=(4, 4)))
    numpy.testing.assert_allclose(
        score_values(h_x @ rotation, h_y @ rotation, s @ rotation), score_values(h_x, h_y, s), atol=1e-12
    )


def _hinge(h, margin):
    tape = de.Tape()
    params = LinkEncoderParams(W=numpy.zeros((2, 1)), U=numpy.zeros((2, 1)), b=numpy.zeros(2))
    return task_loss(
        [Triplet(0, 1, 2)],
        tape.constant(h),
        tape.constant(numpy.zeros((3, 1))),
        _on_tape(tape, params),
        margin,
    ).item()


def test_hinge_examples():
    # d(a, b) = 1, d(a, c) = 0
    assert _hinge([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]], 0.2) == pytest.approx(1.2)
    # d(a, b) = 0, d(a, c) = margin
    assert _hinge([[0.0, 0.0], [0.0, 0.0], [0.2, 0.0]], 0.2) == pytest.approx(0.0, abs=1e-15)


def test_task_loss_without_encoder_ignores_semantics():
    tape = de.Tape()
    params = _on_tape(tape, init_link_params(2, 2, numpy.random.default_rng(0)))
    H = tape.constant([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]])
    S = tape.constant(numpy.ones((3, 2)))
    loss = task_loss(numpy.array([[0, 1, 2]]), H, S, params, 0.2, use_link_encoder=False)
    assert loss.item() == pytest.approx(1.2)


def test_task_loss_needs_triplets():
    tape = de.Tape()
    params = _on_tape(tape, init_link_params(2, 2, numpy.random.default_rng(0)))
    with pytest.raises(ContractError):
        task_loss([], tape.constant(numpy.zeros((3, 2))), tape.constant(numpy.zeros((3, 2))), params, 0.2)


def test_film_reg_sums_row_norms():
    tape = de.Tape()
    assert film_reg([tape.constant([[3.0, 4.0]])], [tape.constant([[0.0, 0.0]])]).item() == pytest.approx(5.0)
    two_paths = film_reg([tape.constant([[3.0, 4.0], [3.0, 4.0]])], [tape.constant(numpy.zeros((2, 2)))])
    assert two_paths.item() == pytest.approx(10.0)
    assert film_reg([], []) == 0.0


def test_total_loss_is_linear_in_the_weight():
    tape = de.Tape()
    task, film = tape.constant(0.7), tape.constant(3.0)
    assert total_loss(task, film, 0.0).item() == pytest.approx(0.7)
    difference = total_loss(task, film, 0.2).item() - total_loss(task, film, 0.1).item()
    assert difference == pytest.approx(0.1 * 3.0)
    with pytest.raises(ConfigurationError):
        total_loss(task, film, -1.0)


def test_loss_config_validation():
    LossConfig().validate()
    with pytest.raises(ConfigurationError):
        LossConfig(margin=0.0).validate()
    with pytest.raises(ConfigurationError):
        LossConfig(film_weight=-1e-4).validate()
