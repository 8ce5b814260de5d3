# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Concurrent execution of independent experiment arms                            #
# ############################################################################## #

import logging

from concurrent.futures import ThreadPoolExecutor

logger = logging.getLogger(__name__)


def run_arms(jobs, workers=4):
    """Run ``(name, callable)`` jobs on a thread pool; results keep the job order.

    Arms share no mutable state, so the first failure is re-raised once all
    submitted jobs have settled.
    """
    if not jobs:
        return {}
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(jobs)))) as executor:
        futures = [(name, executor.submit(job)) for name, job in jobs]
        results = {}
        failure = None
        for name, future in futures:
            try:
                results[name] = future.result()
            except Exception as e:
                logger.error(f"arm '{name}' failed: {str(e)}")
                failure = failure or e
    if failure is not None:
        raise failure
    return results
