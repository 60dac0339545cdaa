"""
Generic genetic algorithm over grid-valued gene vectors.

Steady-state selection keeps the best parents, single-point crossover and
random-reset mutation breed the rest. Fitness values are cached by genome
digest, and a generation's pending evaluations run inline or in a process
pool. Results are merged by slot index, so the worker count never changes
the outcome.
"""

import hashlib
import math
import time
from collections.abc import Callable, Sequence
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger
from pydantic import ValidationError

from polysearch.errors import ArgumentError, ConfigError, FormatError
from polysearch.model import (
    GACheckpoint,
    GAConfig,
    GenerationRecord,
    IndividualState,
    TerminationReason,
)
from polysearch.policy import GeneVector, grid_values

type FitnessFn = Callable[[GeneVector, int], float]

RASTRIGIN_BOUND = 5.12
SEARCH_LEVEL = "search"

try:
    logger.level(SEARCH_LEVEL)
except ValueError:
    logger.level(SEARCH_LEVEL, no=21, color="<cyan>")


@dataclass
class Individual:
    genome: GeneVector
    fitness: float | None = None
    eval_seed: int = 0


@dataclass(frozen=True)
class GenomeSpec:
    """Genome length and the grid every gene is drawn from."""

    length: int
    grid: GeneVector

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ArgumentError(f"Genome length must be positive, got {self.length}")
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size == 0:
            raise ArgumentError("Gene grid must be a non-empty vector")
        object.__setattr__(self, "grid", grid)

    @classmethod
    def from_step(cls, length: int, grid_step: float) -> "GenomeSpec":
        return cls(length, grid_values(grid_step))

    def random_genome(self, rng: np.random.Generator) -> GeneVector:
        return rng.choice(self.grid, size=self.length)


@dataclass
class SearchResult:
    best: Individual
    history: list[GenerationRecord]
    termination_reason: TerminationReason
    evaluations: int


def genome_key(genome: GeneVector) -> str:
    return hashlib.sha1(
        np.ascontiguousarray(genome, dtype=np.float64).tobytes()
    ).hexdigest()


def eval_seed(master_seed: int, generation: int, slot: int) -> int:
    """Evaluation seed of one slot, independent of scheduling."""
    sequence = np.random.SeedSequence([master_seed, generation, slot])
    return int(sequence.generate_state(1)[0])


def _ranked(population: Sequence[Individual]) -> np.ndarray:
    if any(individual.fitness is None for individual in population):
        raise RuntimeError("Selection over an unevaluated individual")
    fitness = np.array([individual.fitness for individual in population])
    return np.argsort(-fitness, kind="stable")


def select_parents(population: Sequence[Individual], k: int) -> list[Individual]:
    """The k fittest individuals, best first; ties go to the lower index."""
    if not 1 <= k <= len(population):
        raise ArgumentError(f"Cannot keep {k} parents of {len(population)}")
    return [population[index] for index in _ranked(population)[:k]]


def single_point_crossover(
    a: GeneVector,
    b: GeneVector,
    rng: np.random.Generator,
    point: int | None = None,
) -> tuple[GeneVector, GeneVector]:
    """Swap the tails of two genomes after a cut drawn from 1..L-1."""
    if a.shape != b.shape:
        raise ArgumentError(f"Crossover of genomes shaped {a.shape} and {b.shape}")
    length = a.size
    if length < 2:
        raise ArgumentError("Crossover needs genomes of length 2 or more")
    cut = int(rng.integers(1, length)) if point is None else point
    if not 1 <= cut < length:
        raise ArgumentError(f"Cut point {cut} outside 1..{length - 1}")
    return (
        np.concatenate([a[:cut], b[cut:]]),
        np.concatenate([b[:cut], a[cut:]]),
    )


def mutate(
    genome: GeneVector, rate: float, grid: GeneVector, rng: np.random.Generator
) -> GeneVector:
    """Replace each gene, with probability rate, by a uniform grid value."""
    if not 0.0 <= rate <= 1.0:
        raise ArgumentError(f"Mutation rate must lie in [0, 1], got {rate}")
    mask = rng.random(genome.size) < rate
    replacements = rng.choice(grid, size=genome.size)
    return np.where(mask, replacements, genome)


def should_terminate(
    history: Sequence[GenerationRecord], config: GAConfig
) -> tuple[bool, TerminationReason | None]:
    if not history:
        raise ArgumentError("Termination check on an empty history")
    if history[-1].generation >= config.max_generations:
        return True, TerminationReason.MAX_GENERATIONS
    stale = 0
    for previous, current in zip(reversed(history[:-1]), reversed(history[1:])):
        if current.best_fitness > previous.best_fitness:
            break
        stale += 1
    if stale >= config.stagnation_limit:
        return True, TerminationReason.STAGNATION
    return False, None


def rastrigin(x: Sequence[float] | np.ndarray) -> float:
    """10n + sum(x^2 - 10 cos(2 pi x)); minimum 0 at the origin."""
    vector = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(vector)):
        raise ArgumentError("Rastrigin of a non-finite vector")
    return float(
        10 * vector.size + np.sum(vector**2 - 10 * np.cos(2 * np.pi * vector))
    )


@dataclass(frozen=True)
class RastriginFitness:
    """Negative Rastrigin of genes in [0, 1] mapped onto [-bound, bound]."""

    bound: float = RASTRIGIN_BOUND

    def decode(self, genome: GeneVector) -> np.ndarray:
        return -self.bound + 2 * self.bound * genome

    def __call__(self, genome: GeneVector, eval_seed: int) -> float:
        return -rastrigin(self.decode(genome))


def _safe_fitness(
    fitness_fn: FitnessFn, genome: GeneVector, seed: int
) -> float:
    try:
        value = float(fitness_fn(genome, seed))
    except Exception as e:
        logger.warning(f"Fitness evaluation failed (seed {seed}): {e!r}")
        return -math.inf
    if not math.isfinite(value):
        logger.warning(f"Fitness evaluation returned {value} (seed {seed})")
        return -math.inf
    return value


_worker_fitness: FitnessFn | None = None


def _install_fitness(fitness_fn: FitnessFn) -> None:
    global _worker_fitness
    _worker_fitness = fitness_fn


def _call_installed(genome: GeneVector, seed: int) -> float:
    assert _worker_fitness is not None, "worker started without a fitness function"
    return _safe_fitness(_worker_fitness, genome, seed)


class _Search:
    """Mutable state of one evolve() call."""

    def __init__(
        self,
        config: GAConfig,
        spec: GenomeSpec,
        fitness_fn: FitnessFn,
        executor: Executor | None,
    ):
        self.config = config
        self.spec = spec
        self.fitness_fn = fitness_fn
        self.executor = executor
        self.rng = np.random.default_rng(np.random.SeedSequence(config.master_seed))
        self.population: list[Individual] = []
        self.history: list[GenerationRecord] = []
        self.cache: dict[str, tuple[float, int]] = {}
        self.evaluations = 0

    @property
    def generation(self) -> int:
        return self.history[-1].generation if self.history else 0

    def _check_genome(self, genome: GeneVector) -> GeneVector:
        vector = np.asarray(genome, dtype=np.float64)
        if vector.shape != (self.spec.length,):
            raise ArgumentError(
                f"Genome of shape {vector.shape}, expected ({self.spec.length},)"
            )
        if not np.all(np.isin(vector, self.spec.grid)):
            raise ArgumentError("Genome contains values outside the gene grid")
        return vector

    def initialize(self, seeds: Sequence[GeneVector]) -> None:
        genomes = [self._check_genome(genome) for genome in seeds]
        genomes = genomes[: self.config.population_size]
        while len(genomes) < self.config.population_size:
            genomes.append(self.spec.random_genome(self.rng))
        self.population = [
            Individual(genome, None, eval_seed(self.config.master_seed, 1, slot))
            for slot, genome in enumerate(genomes)
        ]

    def breed(self) -> None:
        config, generation = self.config, self.generation + 1
        parents = select_parents(self.population, config.num_parents_kept)
        nxt = [
            Individual(parent.genome.copy(), parent.fitness, parent.eval_seed)
            for parent in parents[: config.elite_count]
        ]
        for parent in parents[config.elite_count :]:
            genome = mutate(parent.genome, config.mutation_rate, self.spec.grid, self.rng)
            if np.array_equal(genome, parent.genome):
                nxt.append(Individual(genome, parent.fitness, parent.eval_seed))
            else:
                seed = eval_seed(config.master_seed, generation, len(nxt))
                nxt.append(Individual(genome, None, seed))
        offspring: list[Individual] = []
        while len(offspring) < config.offspring_count:
            if len(parents) >= 2:
                first, second = self.rng.choice(len(parents), size=2, replace=False)
            else:
                first = second = 0
            a, b = parents[first].genome, parents[second].genome
            if self.spec.length >= 2:
                children = single_point_crossover(a, b, self.rng)
            else:
                children = (a.copy(), b.copy())
            for child in children[: config.offspring_count - len(offspring)]:
                genome = mutate(child, config.mutation_rate, self.spec.grid, self.rng)
                slot = len(nxt) + len(offspring)
                seed = eval_seed(config.master_seed, generation, slot)
                offspring.append(Individual(genome, None, seed))
        self.population = nxt + offspring

    def evaluate(self) -> int:
        """Score every unevaluated individual; returns new fitness_fn calls."""
        pending: dict[str, Individual] = {}
        for individual in self.population:
            if individual.fitness is not None:
                continue
            key = genome_key(individual.genome)
            if key not in self.cache and key not in pending:
                pending[key] = individual

        tasks = list(pending.values())
        genomes = [individual.genome for individual in tasks]
        seeds = [individual.eval_seed for individual in tasks]
        if self.executor is None:
            scores = [
                _safe_fitness(self.fitness_fn, genome, seed)
                for genome, seed in zip(genomes, seeds)
            ]
        else:
            scores = list(self.executor.map(_call_installed, genomes, seeds))
        for key, score, seed in zip(pending, scores, seeds):
            self.cache[key] = (score, seed)

        for individual in self.population:
            if individual.fitness is None:
                individual.fitness, individual.eval_seed = self.cache[
                    genome_key(individual.genome)
                ]
        self.evaluations += len(tasks)
        return len(tasks)

    def record(self, evaluations: int, elapsed: float) -> GenerationRecord:
        fitness = np.array([individual.fitness for individual in self.population])
        finite = fitness[np.isfinite(fitness)]
        entry = GenerationRecord(
            generation=self.generation + 1,
            best_fitness=float(fitness.max()),
            mean_fitness=float(finite.mean()) if finite.size else -math.inf,
            evaluations=evaluations,
            elapsed_seconds=elapsed,
        )
        self.history.append(entry)
        logger.bind(search=True).log(
            SEARCH_LEVEL,
            f"generation {entry.generation}: best={entry.best_fitness:.6f} "
            f"mean={entry.mean_fitness:.6f} evaluations={entry.evaluations}",
        )
        return entry

    def best(self) -> Individual:
        return select_parents(self.population, 1)[0]

    def to_checkpoint(self) -> GACheckpoint:
        return GACheckpoint(
            master_seed=self.config.master_seed,
            population=[
                IndividualState(
                    genome=individual.genome.tolist(),
                    fitness=individual.fitness,
                    eval_seed=individual.eval_seed,
                )
                for individual in self.population
            ],
            history=self.history,
            cache=self.cache,
            rng_state=self.rng.bit_generator.state,
            evaluations=self.evaluations,
        )

    def restore(self, checkpoint: GACheckpoint) -> None:
        if checkpoint.master_seed != self.config.master_seed:
            raise ConfigError(
                f"Checkpoint was written with master seed {checkpoint.master_seed}, "
                f"config has {self.config.master_seed}"
            )
        if len(checkpoint.population) != self.config.population_size:
            raise ConfigError(
                f"Checkpoint population of {len(checkpoint.population)} does not "
                f"match population_size {self.config.population_size}"
            )
        try:
            self.population = [
                Individual(
                    self._check_genome(np.array(state.genome)),
                    state.fitness,
                    state.eval_seed,
                )
                for state in checkpoint.population
            ]
        except ArgumentError as e:
            raise FormatError(str(e), "population") from e
        self.history = list(checkpoint.history)
        self.cache = {key: (value[0], value[1]) for key, value in checkpoint.cache.items()}
        self.rng.bit_generator.state = checkpoint.rng_state
        self.evaluations = checkpoint.evaluations


def save_checkpoint(checkpoint: GACheckpoint, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_suffix(path.suffix + ".tmp")
    staging.write_text(checkpoint.model_dump_json(), encoding="utf-8")
    staging.replace(path)
    return path


def load_checkpoint(path: Path) -> GACheckpoint:
    try:
        return GACheckpoint.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise FormatError(f"Invalid GA checkpoint {path}: {e}", "document") from e


def evolve(
    config: GAConfig,
    genome_spec: GenomeSpec,
    fitness_fn: FitnessFn,
    *,
    workers: int = 1,
    checkpoint_path: Path | None = None,
    resume: bool = False,
    initial_genomes: Sequence[GeneVector] = (),
) -> SearchResult:
    """
    Run the genetic algorithm until max_generations or stagnation.

    The evaluated initial population is generation 1. fitness_fn must depend
    only on (genome, eval_seed); with workers > 1 it must be picklable.

    Args:
        checkpoint_path: Where state is written after every generation.
        resume: Continue from checkpoint_path when it exists.
        initial_genomes: Genomes placed in the first slots of generation 1.

    Returns:
        The fittest individual of the final population (the best ever, since
        elites survive unchanged) with the per-generation history.
    """
    if workers < 1:
        raise ArgumentError(f"Worker count must be positive, got {workers}")
    executor = (
        ProcessPoolExecutor(
            max_workers=workers, initializer=_install_fitness, initargs=(fitness_fn,)
        )
        if workers > 1
        else None
    )
    search = _Search(config, genome_spec, fitness_fn, executor)
    try:
        if resume and checkpoint_path is not None and checkpoint_path.exists():
            search.restore(load_checkpoint(checkpoint_path))
            logger.info(
                f"Resuming search at generation {search.generation} from "
                f"{checkpoint_path}"
            )
        else:
            started = time.perf_counter()
            search.initialize(initial_genomes)
            calls = search.evaluate()
            search.record(calls, time.perf_counter() - started)
            if checkpoint_path is not None:
                save_checkpoint(search.to_checkpoint(), checkpoint_path)

        while True:
            done, reason = should_terminate(search.history, config)
            if done:
                break
            started = time.perf_counter()
            search.breed()
            calls = search.evaluate()
            search.record(calls, time.perf_counter() - started)
            if checkpoint_path is not None:
                save_checkpoint(search.to_checkpoint(), checkpoint_path)
    finally:
        if executor is not None:
            executor.shutdown()

    assert reason is not None
    best = search.best()
    logger.info(
        f"Search stopped after {search.generation} generations ({reason}); "
        f"best fitness {best.fitness:.6f}, {search.evaluations} evaluations"
    )
    return SearchResult(best, search.history, reason, search.evaluations)
