"""Deterministic RAM-machine environments.

Each environment keeps its whole state in a vector of byte cells and renders
frames as a pure function of that vector. Transitions use simultaneous
semantics: every next cell value is computed from the complete previous
vector and the action, never from partially updated cells.

Two environments are bundled:

``minipong``
    cell  0 player_y     (UP -4 / DOWN +4, clipped to [16, 176])
    cell  1 enemy_y      (moves 2 toward ball_y unless within 6 rows of it)
    cell  2 ball_x       (recentred to 80 after a miss)
    cell  3 ball_y       (drawn at cells[3] - 14, bounces inside [22, 174])
    cell  4 ball_vx      (two's complement, +-2)
    cell  5 ball_vy      (two's complement, +-2)
    cell  6 player_score (rolls over to 0 one step after reaching 21)
    cell  7 enemy_score
    cell  8 parity       (1 - parity every step, never read)
    cell  9 constant 255 (never read, never drawn)

``minifreeway``
    cell  0      chicken_y  (UP -4 / DOWN +4 in [8, 180]; at 8 it scores and
                             returns to 180)
    cells 1-10   car_x      (cars 1-5 add their speed, 6-10 subtract, mod 256)
    cells 11-20  car counters, car i moves on the step its counter wraps
    cell  21     game-active flag, constant 1
    cell  22     score
"""

from __future__ import annotations

import copy
import itertools
from dataclasses import dataclass, field

import numpy as np

NOOP, UP, DOWN = 0, 1, 2
ACTIONS = (NOOP, UP, DOWN)
ACTION_NAMES = {NOOP: "NOOP", UP: "UP", DOWN: "DOWN"}

SCREEN_W = 160
SCREEN_H = 192


class EnvError(Exception):
    pass


class UnknownAction(EnvError):
    pass


class IndexOutOfRange(EnvError, IndexError):
    pass


class StaleToken(EnvError):
    pass


class UnknownEnvironment(EnvError, KeyError):
    pass


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) palette indices, 0 = background

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and np.array_equal(
            self.pixels, other.pixels
        )

    def __hash__(self):
        return hash((self.width, self.height, self.pixels.tobytes()))


@dataclass(frozen=True)
class ObjectState:
    category: str
    instance: int
    x: int
    y: int
    w: int
    h: int
    value: int | None = None
    visible: bool = True

    @property
    def key(self) -> tuple[str, int]:
        return (self.category, self.instance)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def to_dict(self) -> dict:
        d = {"c": self.category, "i": self.instance, "x": self.x, "y": self.y, "w": self.w, "h": self.h}
        if self.value is not None:
            d["v"] = self.value
        if not self.visible:
            d["vis"] = False
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectState":
        return cls(
            category=d["c"], instance=int(d["i"]), x=int(d["x"]), y=int(d["y"]),
            w=int(d["w"]), h=int(d["h"]), value=d.get("v"), visible=d.get("vis", True),
        )

    @classmethod
    def hidden(cls, category: str, instance: int, value: int | None = None) -> "ObjectState":
        return cls(category, instance, 0, 0, 0, 0, value, False)


@dataclass(frozen=True)
class PaletteEntry:
    category: str
    score_bar: bool = False
    # lane assignment for repeated categories: instance = (y - lane_y0) // lane_pitch + 1
    lane_y0: int | None = None
    lane_pitch: int | None = None


@dataclass(frozen=True)
class StepRecord:
    state_after: np.ndarray
    reward: int
    done: bool


@dataclass(frozen=True)
class SnapshotToken:
    owner: int
    cells: bytes
    rng_state: dict = field(compare=False)
    t: int = 0


_instance_ids = itertools.count(1)


class RamEnv:
    """Base class: byte-cell state, deterministic render, snapshot/restore."""

    name = "base"
    ram_size = 32
    actions = ACTIONS
    width = SCREEN_W
    height = SCREEN_H
    palette: dict[int, PaletteEntry] = {}
    roster: tuple[tuple[str, int], ...] = ()

    def __init__(self):
        self._id = next(_instance_ids)
        self.cells: np.ndarray | None = None
        self.rng = np.random.default_rng(0)
        self.t = 0

    # -- subclass hooks -------------------------------------------------
    def initial_cells(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition(self, cells: np.ndarray, action: int) -> tuple[np.ndarray, int, bool]:
        """Pure next-state function over int arrays; must not mutate ``cells``."""
        raise NotImplementedError

    def objects(self, cells: np.ndarray) -> list[ObjectState]:
        raise NotImplementedError

    # -- public API -----------------------------------------------------
    def reset(self, seed: int = 0) -> np.ndarray:
        self.rng = np.random.default_rng(seed)
        cells = np.asarray(self.initial_cells(self.rng), dtype=np.int64) % 256
        self.cells = cells.astype(np.uint8)
        self.t = 0
        return self.cells.copy()

    def _require_reset(self):
        if self.cells is None:
            raise EnvError("environment has not been reset")

    def step(self, action: int) -> StepRecord:
        self._require_reset()
        if action not in self.actions:
            raise UnknownAction(f"action {action!r} not in {self.actions}")
        nxt, reward, done = self.transition(self.cells.astype(np.int64), int(action))
        self.cells = (np.asarray(nxt, dtype=np.int64) % 256).astype(np.uint8)
        self.t += 1
        return StepRecord(self.cells.copy(), int(reward), bool(done))

    def state(self) -> np.ndarray:
        self._require_reset()
        return self.cells.copy()

    def set_cell(self, index: int, value: int) -> None:
        self._require_reset()
        if not 0 <= index < self.ram_size:
            raise IndexOutOfRange(f"cell {index} outside [0, {self.ram_size})")
        if not 0 <= value <= 255:
            raise ValueError(f"cell value {value} is not a byte")
        self.cells[index] = value

    def snapshot(self) -> SnapshotToken:
        self._require_reset()
        return SnapshotToken(self._id, self.cells.tobytes(), copy.deepcopy(self.rng.bit_generator.state), self.t)

    def restore(self, token: SnapshotToken) -> None:
        if token.owner != self._id:
            raise StaleToken("snapshot belongs to another environment instance")
        self.cells = np.frombuffer(token.cells, dtype=np.uint8).copy()
        self.rng.bit_generator.state = copy.deepcopy(token.rng_state)
        self.t = token.t

    def render(self, cells=None) -> Frame:
        cells = self.state() if cells is None else np.asarray(cells)
        pixels = np.zeros((self.height, self.width), dtype=np.uint8)
        index_of = {e.category: i for i, e in self.palette.items()}
        for obj in self.objects(cells):
            if not obj.visible:
                continue
            pixels[obj.y : obj.y + obj.h, obj.x : obj.x + obj.w] = index_of[obj.category]
        return Frame(self.width, self.height, pixels)

    def oracle_objects(self, cells=None) -> list[ObjectState]:
        cells = self.state() if cells is None else np.asarray(cells)
        return self.objects(cells)

    def metadata(self) -> dict:
        return {
            "name": self.name,
            "ram_size": self.ram_size,
            "actions": {a: ACTION_NAMES[a] for a in self.actions},
            "palette": {i: e.category for i, e in self.palette.items()},
            "roster": [f"{c}{i or ''}" for c, i in self.roster],
            "frame": (self.width, self.height),
        }


def _score_bar(category: str, x: int, y: int, value: int) -> ObjectState:
    return ObjectState(category, 0, x, y, value + 1, 4, value=value)


class MiniPong(RamEnv):
    name = "minipong"
    palette = {
        1: PaletteEntry("Player"),
        2: PaletteEntry("Enemy"),
        3: PaletteEntry("Ball"),
        4: PaletteEntry("PlayerScore", score_bar=True),
        5: PaletteEntry("EnemyScore", score_bar=True),
    }
    roster = (("Player", 0), ("Enemy", 0), ("Ball", 0), ("PlayerScore", 0), ("EnemyScore", 0))

    PLAYER_X, ENEMY_X = 140, 16
    PADDLE_W, PADDLE_H = 4, 16
    BALL_W, BALL_H = 2, 4
    BALL_Y_OFFSET = 14
    PLAYER_HIT_X, ENEMY_HIT_X = 136, 22
    PLAYER_MISS_X, ENEMY_MISS_X = 138, 20
    PLAYER_REACH = 24
    ENEMY_SLACK = 6  # the enemy idles while the ball is this close vertically
    ENEMY_BLIND_Y = 130  # the enemy cannot return balls at or below this row
    SERVE_X = 80
    TOP_BAND, BOTTOM_BAND = 26, 170
    MAX_SCORE = 21

    def initial_cells(self, rng):
        c = np.zeros(self.ram_size, dtype=np.int64)
        c[0] = 96
        c[1] = 96
        c[2] = self.SERVE_X
        c[3] = 2 * int(rng.integers(13, 85))
        c[4] = 2 if rng.integers(2) else 254
        c[5] = 2 if rng.integers(2) else 254
        c[9] = 255
        return c

    def transition(self, s, action):
        n = s.copy()
        p, e, x, b, vx, vy = (int(v) for v in s[:6])
        if action == UP and p > 16:
            n[0] = p - 4
        elif action == DOWN and p < 176:
            n[0] = p + 4
        if e - b >= self.ENEMY_SLACK:
            n[1] = e - 2
        elif b - e >= self.ENEMY_SLACK:
            n[1] = e + 2
        player_missed = x == self.PLAYER_MISS_X and vx == 2
        enemy_missed = x == self.ENEMY_MISS_X and vx == 254
        n[2] = self.SERVE_X if player_missed or enemy_missed else x + vx
        n[3] = b + vy
        if x == self.PLAYER_HIT_X and abs(p - b) < self.PLAYER_REACH:
            n[4] = 254
        elif x == self.ENEMY_HIT_X and b < self.ENEMY_BLIND_Y:
            n[4] = 2
        if b < self.TOP_BAND:
            n[5] = 2
        elif self.BOTTOM_BAND < b:
            n[5] = 254
        reward = 0
        if s[6] == self.MAX_SCORE:
            n[6] = 0
        elif enemy_missed:
            n[6] = s[6] + 1
            reward = 1
        if s[7] == self.MAX_SCORE:
            n[7] = 0
        elif player_missed:
            n[7] = s[7] + 1
            reward = -1
        n[8] = 1 - s[8]
        return n % 256, reward, False

    def objects(self, s):
        s = [int(v) for v in s]
        return [
            ObjectState("Player", 0, self.PLAYER_X, s[0], self.PADDLE_W, self.PADDLE_H),
            ObjectState("Enemy", 0, self.ENEMY_X, s[1], self.PADDLE_W, self.PADDLE_H),
            ObjectState("Ball", 0, s[2], s[3] - self.BALL_Y_OFFSET, self.BALL_W, self.BALL_H),
            _score_bar("PlayerScore", 100, 1, s[6]),
            _score_bar("EnemyScore", 30, 1, s[7]),
        ]


class MiniFreeway(RamEnv):
    name = "minifreeway"
    palette = {
        1: PaletteEntry("Chicken"),
        2: PaletteEntry("Car", lane_y0=20, lane_pitch=16),
        3: PaletteEntry("Score", score_bar=True),
    }
    roster = (("Chicken", 0),) + tuple(("Car", i) for i in range(1, 11)) + (("Score", 0),)

    PERIODS = (1, 1, 2, 2, 1, 1, 2, 3, 4, 2)
    SPEEDS = (1, 2, 1, 2, 3, 3, 2, 1, 2, 1)
    CHICKEN_X, CHICKEN_W, CHICKEN_H = 152, 6, 8
    CAR_W, CAR_H = 8, 8
    CAR_MAX_X = 144  # cars with a larger cell value are off the road
    TOP, BOTTOM = 8, 180
    MAX_SCORE = 21

    def initial_cells(self, rng):
        c = np.zeros(self.ram_size, dtype=np.int64)
        c[0] = self.BOTTOM
        c[1:11] = rng.integers(0, 256, size=10)
        # counters start in a warm-up phase and only begin cycling after they wrap to 0
        c[11:21] = 96 + rng.integers(0, 64, size=10)
        # cars 4/7 and 3/10 share a period and a speed; opposite counter phases
        # keep each pair from moving as exact mirror images of one another
        for a, b in ((14, 17), (13, 20)):
            if c[a] % 2 == c[b] % 2:
                c[b] += 1
        c[21] = 1
        return c

    def transition(self, s, action):
        n = s.copy()
        y = int(s[0])
        if y == self.TOP:
            n[0] = self.BOTTOM
        elif action == UP:
            n[0] = y - 4
        elif action == DOWN and y < self.BOTTOM:
            n[0] = y + 4
        for i in range(10):
            period, counter = self.PERIODS[i], int(s[11 + i])
            fires = counter == period - 1
            n[11 + i] = 0 if fires else counter + 1
            if fires:
                n[1 + i] = s[1 + i] + self.SPEEDS[i] if i < 5 else s[1 + i] - self.SPEEDS[i]
        reward = 0
        if s[22] == self.MAX_SCORE:
            n[22] = 0
        elif y == self.TOP:
            n[22] = s[22] + 1
            reward = 1
        return n % 256, reward, False

    def objects(self, s):
        s = [int(v) for v in s]
        objs = [ObjectState("Chicken", 0, self.CHICKEN_X, s[0], self.CHICKEN_W, self.CHICKEN_H)]
        for i in range(1, 11):
            lane_y = 20 + 16 * (i - 1)
            if s[i] <= self.CAR_MAX_X:
                objs.append(ObjectState("Car", i, s[i], lane_y, self.CAR_W, self.CAR_H))
            else:
                objs.append(ObjectState.hidden("Car", i))
        objs.append(_score_bar("Score", 60, 2, s[22]))
        return objs


ENVIRONMENTS: dict[str, type[RamEnv]] = {"minipong": MiniPong, "minifreeway": MiniFreeway}


def make_env(name: str) -> RamEnv:
    try:
        return ENVIRONMENTS[name.lower()]()
    except KeyError:
        raise UnknownEnvironment(f"unknown environment {name!r}; known: {', '.join(ENVIRONMENTS)}") from None
