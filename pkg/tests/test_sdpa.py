"""dat-s serialization: canonical writing, reading, byte-exact round trips."""

import numpy as np

from sosctl.sdpa import read_sdpa, read_sdpa_text, write_sdpa, write_sdpa_text
from sosctl.sdpsolve import SdpProblem, solve


def sample_problem():
    return SdpProblem(
        block_sizes=(2, 1),
        b=np.array([1.0, -0.25]),
        constraints=(
            {(0, 0, 0): 1.0, (0, 1, 1): 1.0},
            {(0, 0, 1): 0.5, (1, 0, 0): -2.0},
        ),
        objective={(0, 0, 0): 2.0, (0, 0, 1): 1.0, (0, 1, 1): 2.0},
    )


def test_write_read_round_trip_is_byte_identical(tmp_path):
    prob = sample_problem()
    path = tmp_path / "prob.dat-s"
    write_sdpa(prob, path)
    text1 = path.read_text()
    back = read_sdpa(path)
    path2 = tmp_path / "prob2.dat-s"
    write_sdpa(back, path2)
    assert path2.read_text() == text1


def test_round_trip_preserves_semantics():
    prob = sample_problem()
    back = read_sdpa_text(write_sdpa_text(prob))
    assert back.block_sizes == prob.block_sizes
    assert np.array_equal(back.b, prob.b)
    s1 = solve(prob)
    s2 = solve(back)
    assert s1.status == s2.status == "optimal"
    assert abs(s1.primal_objective - s2.primal_objective) < 1e-10


def test_objective_sign_convention():
    # matrix 0 stores the negated objective so external solvers maximizing
    # <F0, Y> solve the same problem
    prob = sample_problem()
    text = write_sdpa_text(prob)
    line = next(ln for ln in text.splitlines() if ln.startswith("0 1 1 1"))
    assert float(line.split()[-1]) == -2.0


def test_reader_expands_diagonal_blocks():
    text = "\n".join(
        [
            "1",
            "2",
            "2 -2",
            "1.0",
            "0 1 1 1 1.0",
            "1 2 1 1 3.0",
            "1 2 2 2 4.0",
        ]
    ) + "\n"
    prob = read_sdpa_text(text)
    assert prob.block_sizes == (2, 1, 1)
    assert prob.constraints[0][(1, 0, 0)] == 3.0
    assert prob.constraints[0][(2, 0, 0)] == 4.0


def test_reader_tolerates_comments_and_punctuation():
    text = '"a comment line\n*another\n1\n1\n{2}\n1.0,\n1 1 1 2 0.5\n'
    prob = read_sdpa_text(text)
    assert prob.block_sizes == (2,)
    assert prob.constraints[0][(0, 0, 1)] == 0.5
