# -*- coding: utf-8 -*-
"""
Batch execution of study grids: every (variant, configuration) pair is one cell, cells run through a thread pool and
complete in any order, results come back in grid order (variants outer, configurations inner).
"""
import itertools
import logging
from dataclasses import dataclass
from functools import partial
from multiprocessing.pool import ThreadPool
from typing import Any, List, Optional

from tqdm import tqdm

logger = logging.getLogger(__name__)


@dataclass
class CellResult:
    index: int
    variant: str
    config_name: str
    value: Any = None
    error: Optional[str] = None

    @property
    def failed(self):
        return self.error is not None


def run_cells(cell_fn, variants, configs, number_workers=1, display_progress=True):
    """
    Run cell_fn(variant, config_name) for every cell of the grid.

    Parameters
    ----------
    cell_fn : Callable[[str, str], Any]
        Function computing one cell
    variants : Sequence[str]
        Row labels of the grid
    configs : Sequence[str]
        Column labels of the grid
    number_workers : int, optional
        Number of threads, by default 1
    display_progress : bool, optional
        Display a progress bar over cells, by default True

    Returns
    -------
    List[CellResult]
        One result per cell, in grid order; a cell that raised carries the error instead of a value
    """
    jobs = list(enumerate(itertools.product(variants, configs)))
    process_func = partial(_cell_run_func, cell_fn)
    results: List[CellResult] = []

    with tqdm(total=len(jobs), desc='Cells', disable=not display_progress) as pbar:
        if number_workers == 1 or len(jobs) <= 1:
            for job in jobs:
                results.append(process_func(job))
                pbar.update()
        else:
            with ThreadPool(min(number_workers, len(jobs))) as p:
                for result in p.imap_unordered(process_func, jobs):
                    results.append(result)
                    pbar.update()

    failed = [r for r in results if r.failed]
    if failed:
        logger.warning("%d of %d cells failed", len(failed), len(results))
    return sorted(results, key=lambda r: r.index)


def _cell_run_func(cell_fn, job):
    index, (variant, config_name) = job
    try:
        return CellResult(index, variant, config_name, value=cell_fn(variant, config_name))
    except Exception as e:
        logger.warning("Cell %s/%s failed: %s", variant, config_name, e)
        return CellResult(index, variant, config_name, error="{}: {}".format(type(e).__name__, e))
