"""Reference data for the pathological write-scan execution.

Each row is the post-state after one row of the schedule: register
contents ``r1, r2, r3`` followed by the views of ``p1, p2, p3``.  The
state after row 13 equals the one after row 4, so rows 5-13 repeat forever.
"""

FIG2_ROWS = [
    ([[], [1], [1]], [[1], [2], [3]]),
    ([[2], [1], [1]], [[1], [1, 2], [3]]),
    ([[3], [1], [1]], [[1], [1, 2], [1, 3]]),
    ([[1], [1], [1]], [[1], [1, 2], [1, 3]]),
    ([[1], [1, 2], [1]], [[1], [1, 2], [1, 3]]),
    ([[1], [1, 3], [1]], [[1], [1, 2], [1, 3]]),
    ([[1], [1], [1]], [[1], [1, 2], [1, 3]]),
    ([[1], [1], [1, 2]], [[1], [1, 2], [1, 3]]),
    ([[1], [1], [1, 3]], [[1], [1, 2], [1, 3]]),
    ([[1], [1], [1]], [[1], [1, 2], [1, 3]]),
    ([[1, 2], [1], [1]], [[1], [1, 2], [1, 3]]),
    ([[1, 3], [1], [1]], [[1], [1, 2], [1, 3]]),
    ([[1], [1], [1]], [[1], [1, 2], [1, 3]]),
]

FIG2_LOOP = (4, 13)  # the state after row 13 equals the state after row 4

FIG2_STABLE_VIEWS = [[1], [1, 2], [1, 3]]
FIG2_STABLE_EDGES = [([1], [1, 2]), ([1], [1, 3])]
FIG2_SOURCE = [1]
