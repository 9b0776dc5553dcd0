import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magm.config import RunPlan, parse_config, parse_sweep, plan_to_json, to_config_text
from magm.errors import ConfigError


def test_minimal_document_defaults():
    plan = parse_config("problem = jos1\nn = 50\nmode = mag_gm\n")
    assert plan.problem.name == "jos1" and plan.problem.n == 50
    s = plan.solver
    assert (s.a, s.b, s.s, s.eps, s.k_max) == (0.0, 0.25, None, 1e-10, 100_000)


def test_sections_and_comments():
    text = """
    # leading comment
    [problem]
    name = quadratic   # trailing comment
    n = 20
    m = 3
    seed = 7
    [solver]
    a = 0.5
    b = 0.0625
    s = auto
    k_max = 1e4
    [output]
    dir = runs/q
    store_iterates = yes
    """
    plan = parse_config(text)
    assert plan.problem.m == 3 and plan.problem.seed == 7
    assert plan.solver.k_max == 10_000 and plan.solver.s is None
    assert plan.output.dir == "runs/q" and plan.output.store_iterates


@pytest.mark.parametrize(
    "text,key",
    [
        ("b = 0.3\n", "b"),
        ("a = 0.5\nb = 0.05\n", "b"),
        ("a = 1.0\n", "a"),
        ("mode = newton\n", "mode"),
        ("eps = -1\n", "eps"),
        ("t_end = 1\n", "t_end"),
    ],
)
def test_range_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key


def test_b_range_message():
    with pytest.raises(ConfigError, match=r"b must lie in \[a²/4, 1/4\]"):
        parse_config("b = 0.3\n")


@pytest.mark.parametrize(
    "text,line",
    [
        ("n = 2\nbogus = 1\n", 2),
        ("n = 2\n\nn = 3\n", 3),
        ("[solver]\nn = 2\n", 2),
        ("[nowhere]\n", 1),
        ("n 2\n", 1),
        ("k_max = 2.5\n", 1),
        ("a = 0 | 0.5\n", 1),
    ],
)
def test_syntax_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_sweep_expansion():
    plans = parse_sweep("n = 2 | 10\na, b = 0, 0.25 | 0.5, 0.0625\ndir = out\n")
    assert len(plans) == 4
    assert [(p.problem.n, p.solver.a, p.solver.b) for p in plans] == [
        (2, 0.0, 0.25),
        (2, 0.5, 0.0625),
        (10, 0.0, 0.25),
        (10, 0.5, 0.0625),
    ]
    assert [p.output.dir for p in plans] == [f"out/run_{i:03d}" for i in range(4)]


def test_sweep_validates_every_plan():
    with pytest.raises(ConfigError):
        parse_sweep("a = 0 | 0.9\nb = 0.1\n")


def test_single_plan_sweep_keeps_directory():
    (plan,) = parse_sweep("n = 3\n", out="elsewhere")
    assert plan.output.dir == "elsewhere"


def test_json_echo_round_trip():
    plan = parse_config("problem = quadratic\nn = 4\nm = 2\nrate_window = 10, 500\nmode = msd\n")
    assert parse_config(plan_to_json(plan)) == plan


def test_json_rejects_unknown_key():
    with pytest.raises(ConfigError):
        parse_config('{"solver": {"speed": 3}}')


plans = st.builds(
    lambda n, a, frac, k, alpha, mode, store: parse_config(
        f"n = {n}\na = {a!r}\nb = {a * a / 4 + frac * (0.25 - a * a / 4)!r}\nk_max = {k}\n"
        f"alpha = {alpha!r}\nmode = {mode}\nstore_iterates = {store}\n"
    ),
    st.integers(1, 100),
    st.floats(0, 0.99),
    st.floats(0, 1),
    st.integers(1, 10**6),
    st.floats(0.1, 10),
    st.sampled_from(["mag_gm", "msd", "mavd"]),
    st.booleans(),
)


@given(plans)
@settings(max_examples=50)
def test_text_round_trip(plan):
    assert isinstance(plan, RunPlan)
    assert parse_config(to_config_text(plan)) == plan
