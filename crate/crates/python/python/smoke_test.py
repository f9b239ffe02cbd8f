"""Smoke test for the pqii extension module.

Build and install first:  pip install --no-build-isolation crates/python
"""

import math
import os
import tempfile

import pqii


def main():
    data = pqii.gen_synthetic(1200, 16, n_clusters=8, seed=3)
    assert data.shape == (1200, 16)

    assert pqii.chunk_rows(10, 3) == [(0, 4), (4, 7), (7, 10)]

    km = pqii.kmeans_fit([[0.0], [1.0], [9.0], [10.0]], 2, seed=0)
    assert sorted(round(c[0], 6) for c in km.centroids.to_list()) == [0.5, 9.5]
    assert abs(km.inertia - 1.0) < 1e-9
    assert all(b <= a for a, b in zip(km.inertia_trace, km.inertia_trace[1:]))

    cb = pqii.Codebook.fit(data, 4, ks=16, seed=1)
    assert (cb.m, cb.ks, cb.sub_dim) == (4, 16, 4)
    codes = cb.encode(data)
    assert codes.shape == (1200, 4)
    err = pqii.rmse(data, cb.decode(codes))
    assert math.isclose(err, cb.reconstruction_rmse(data))

    q = data.row(7)
    code = codes.row(7)
    decoded = cb.decode([code]).row(0)
    exact = sum((a - b) ** 2 for a, b in zip(q, decoded))
    assert math.isclose(cb.adc_distance(q, code), exact, rel_tol=1e-5)
    table = cb.adc_table(q)
    assert len(table) == 4 and len(table[0]) == 16

    index = pqii.Index.build(cb, codes, nlist=8, seed=1)
    assert len(index) == 1200 and index.nlist == 8
    hits = index.query(q, k=5)
    assert hits == pqii.flat_scan(cb, codes, q, k=5)
    assert [d for _, d in hits] == sorted(d for _, d in hits)
    assert all(i in (3, 7, 500) for i, _ in index.query(q, k=5, subset=[3, 7, 500]))

    halves = [index.sibling(codes.to_list()[s:e], list(range(s, e))) for s, e in pqii.chunk_rows(1200, 2)]
    assert halves[0].merge(halves[1]) == index

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "idx.pqii")
        index.save(path)
        assert pqii.Index.load(path) == index
        cb.save(os.path.join(tmp, "cb.pqcb"))
        assert pqii.Codebook.load(os.path.join(tmp, "cb.pqcb")).codeword(0, 0) == cb.codeword(0, 0)

    report = pqii.run_pipeline(data, 4, ks=16, mode="parallel_pq_index", chunks=4, threads=2, measure_single=True)
    assert report.index is not None and len(report.index) == 1200
    assert report.global_rmse / report.single_rmse <= 1.5
    assert dict(report.phase_timings)["total"] >= 0.0

    try:
        pqii.Codebook.fit(data, 5)
    except ValueError as e:
        assert "divisible" in str(e)
    else:
        raise AssertionError("indivisible M accepted")

    print("pqii smoke test: ok")


if __name__ == "__main__":
    main()
