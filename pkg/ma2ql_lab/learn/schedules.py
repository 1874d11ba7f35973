import numpy as np

from ma2ql_lab.meta.meta_tools import ParameterError


class EpsilonSchedule:
    """
    Linear decay of the exploration rate from `start` to `end` over the first `decay_steps` env steps,
    constant at `end` afterwards.
    """

    def __init__(self, start: float, end: float, decay_steps: int) -> None:
        for name, value in (("start", start), ("end", end)):
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"epsilon {name} must be in [0, 1], got {value}.")
        if decay_steps < 0:
            raise ParameterError(f"epsilon decay_steps must be >= 0, got {decay_steps}.")

        self.start = float(start)
        self.end = float(end)
        self.decay_steps = int(decay_steps)

    def __repr__(self) -> str:
        return f"EpsilonSchedule({self.start} -> {self.end} over {self.decay_steps} steps)"

    def value(self, env_step: int) -> float:
        if self.decay_steps == 0 or env_step >= self.decay_steps:
            return self.end
        return self.start + (self.end - self.start) * env_step / self.decay_steps


class LearningRate:
    """
    Q-learning step size.

    Arguments:
        kind (str):
            "constant" always returns alpha.
            "visit" returns 1 / N(s, a) where N counts the updates of that table entry, this one included.
    """

    KINDS = ("constant", "visit")

    def __init__(self, kind: str = "constant", alpha: float = 0.1) -> None:
        if kind not in self.KINDS:
            raise ParameterError(f"Unknown learning-rate schedule '{kind}'. Use one of {', '.join(self.KINDS)}.")
        if not 0.0 < alpha <= 1.0:
            raise ParameterError(f"alpha must be in (0, 1], got {alpha}.")

        self.kind = kind
        self.alpha = float(alpha)

    def __repr__(self) -> str:
        return f"LearningRate({self.kind}, alpha={self.alpha})"

    def rate(self, visits: int) -> float:
        if self.kind == "visit":
            return 1.0 / visits
        return self.alpha


def epsilon_greedy(q_row: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """
    With probability 1 - epsilon the greedy action (lowest index among ties), otherwise a uniformly
    random action. One uniform draw is always consumed, plus one integer draw when exploring.
    """

    if len(q_row) == 0:
        raise ParameterError("Can't pick an action from an empty Q row.")
    if not 0.0 <= epsilon <= 1.0:
        raise ParameterError(f"epsilon must be in [0, 1], got {epsilon}.")

    if rng.random() < epsilon:
        return int(rng.integers(len(q_row)))
    return int(np.argmax(q_row))
