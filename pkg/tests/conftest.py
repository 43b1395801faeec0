import numpy as np


def read_legacy_vtk(path):
    """Strict reader for the ASCII unstructured-grid subset we write."""
    tokens = open(path).read().split("\n")
    assert tokens[0] == "# vtk DataFile Version 2.0"
    assert tokens[2] == "ASCII"
    assert tokens[3] == "DATASET UNSTRUCTURED_GRID"
    body = " ".join(tokens[4:]).split()
    pos = 0

    def take(n, cast=float):
        nonlocal pos
        out = [cast(t) for t in body[pos : pos + n]]
        assert len(out) == n
        pos += n
        return out

    assert body[pos] == "POINTS"
    npts, kind = int(body[pos + 1]), body[pos + 2]
    assert kind == "double"
    pos += 3
    points = np.array(take(3 * npts)).reshape(npts, 3)
    assert body[pos] == "CELLS"
    ncells, size = int(body[pos + 1]), int(body[pos + 2])
    pos += 3
    raw = take(size, int)
    cells, i = [], 0
    while i < len(raw):
        n = raw[i]
        cells.append(raw[i + 1 : i + 1 + n])
        i += n + 1
    assert len(cells) == ncells
    assert body[pos] == "CELL_TYPES" and int(body[pos + 1]) == ncells
    pos += 2
    types = take(ncells, int)
    data = {}
    if pos < len(body):
        assert body[pos] == "POINT_DATA" and int(body[pos + 1]) == npts
        pos += 2
        while pos < len(body):
            assert body[pos] == "SCALARS"
            name = body[pos + 1]
            assert body[pos + 2] == "double" and body[pos + 3] == "1"
            assert body[pos + 4] == "LOOKUP_TABLE" and body[pos + 5] == "default"
            pos += 6
            data[name] = np.array(take(npts))
    for c in cells:
        assert all(0 <= v < npts for v in c)
    return points, cells, types, data


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)
