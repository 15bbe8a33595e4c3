import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

from coed.config import Option

NUM_THREADS = "num_threads"

T = TypeVar("T")
R = TypeVar("R")


def actual_num_threads(num_threads: int) -> int:
    """
    Returns the actual number of threads.

    :param num_threads: the threads to use, 0=all, negative number #cores+num_threads
    :type num_threads: int
    :return: the actual number of threads to use (at least 1)
    :rtype: int
    """
    num_cores = os.cpu_count() or 1
    if num_threads == 0:
        result = num_cores
    elif num_threads > 0:
        result = min(num_threads, num_cores)
    else:
        result = num_cores + num_threads
    return max(1, result)


def num_threads_option(def_num_threads: int = 1) -> Option:
    """
    Configures an Option object to use for num_threads.

    :param def_num_threads: the default number of threads
    :type def_num_threads: int
    :return: the configured Option object
    :rtype: Option
    """
    return Option(name=NUM_THREADS, value_type=int, def_value=def_num_threads,
                  help="The number of threads to use; 0: all cores; >0: specific number of cores (capped at actual number of cores); <0: #cores + num_threads")


def ordered_map(func: Callable[[T], R], items: Sequence[T], num_threads: int = 1) -> List[R]:
    """
    Applies the function to all items, potentially in parallel, and returns the results
    in the order of the items.

    :param func: the function to apply
    :type func: callable
    :param items: the items to process
    :type items: list
    :param num_threads: see actual_num_threads
    :type num_threads: int
    :return: the results
    :rtype: list
    """
    workers = actual_num_threads(num_threads)
    if workers == 1 or len(items) < 2:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(func, items))
