import numpy as np
import pytest

from birdclean import _hac_py, hac


def brute_force_average_linkage(points):
    """O(n^3) reference: recompute every inter-cluster mean pairwise
    distance from scratch at each step. Same tie rule as the kernel."""
    from scipy.spatial.distance import pdist, squareform

    n = len(points)
    dist = squareform(pdist(points))
    clusters = {i: [i] for i in range(n)}
    merges = []
    next_label = n
    while len(clusters) > 1:
        # recompute every inter-cluster mean from scratch: mean over the
        # full member-pair submatrix, via membership-matrix products
        labels = sorted(clusters)
        k = len(labels)
        member = np.zeros((n, k))
        for col, lab in enumerate(labels):
            member[clusters[lab], col] = 1.0
        sizes = member.sum(axis=0)
        means = (member.T @ dist @ member) / np.outer(sizes, sizes)
        means[np.tril_indices(k)] = np.inf
        dmin = means.min()
        # row-major scan over sorted labels = lexicographic tie-break
        i, j = np.argwhere(means == dmin)[0]
        d, a, b = float(dmin), labels[i], labels[j]
        merged = clusters.pop(a) + clusters.pop(b)
        clusters[next_label] = merged
        merges.append((a, b, d, len(merged)))
        next_label += 1
    return merges


class TestAverageLinkage:
    def test_three_point_line(self):
        tree = hac.hac_average_linkage(np.array([[0.0], [1.0], [3.0]]))
        assert tree.merges[0] == (0, 1, pytest.approx(1.0), 2)
        # average of d(0,3)=3 and d(1,3)=2
        assert tree.merges[1] == (2, 3, pytest.approx(2.5), 3)

    def test_identical_points(self):
        tree = hac.hac_average_linkage(np.array([[1.0, 2.0], [1.0, 2.0]]))
        assert tree.merges == [(0, 1, 0.0, 2)]

    def test_rejects_single_point(self):
        with pytest.raises(ValueError):
            hac.hac_average_linkage(np.array([[1.0]]))

    @pytest.mark.parametrize("seed", range(10))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 65))
        d = int(rng.integers(1, 11))
        points = rng.normal(size=(n, d))
        tree = hac.hac_average_linkage(points)
        expected = brute_force_average_linkage(points)
        for got, want in zip(tree.merges, expected):
            assert got[0] == want[0] and got[1] == want[1] and got[3] == want[3]
            assert got[2] == pytest.approx(want[2], abs=1e-9)

    def test_duplicates_merge_first(self):
        points = np.array([[0.0], [5.0], [0.0], [9.0], [5.0]])
        tree = hac.hac_average_linkage(points)
        assert tree.merges[0][:3] == (0, 2, 0.0)
        assert tree.merges[1][:3] == (1, 4, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_heights(self, seed):
        rng = np.random.default_rng(100 + seed)
        points = rng.normal(size=(50, 4))
        heights = hac.hac_average_linkage(points).heights()
        assert np.all(np.diff(heights) >= -1e-12)

    def test_kernels_agree(self):
        from scipy.spatial.distance import pdist, squareform

        rng = np.random.default_rng(42)
        for _ in range(10):
            d = squareform(pdist(rng.normal(size=(30, 3))))
            m_c, h_c, s_c = hac._kernel.average_linkage(d.copy())
            m_p, h_p, s_p = _hac_py.average_linkage(d.copy())
            assert np.array_equal(m_c, m_p)
            assert np.allclose(h_c, h_p, atol=1e-12)
            assert np.array_equal(s_c, s_p)


@pytest.fixture(scope="module")
def tree_points():
    rng = np.random.default_rng(5)
    points = np.concatenate(
        [rng.normal(0, 0.3, size=(20, 2)), rng.normal(5, 0.3, size=(15, 2))]
    )
    return hac.hac_average_linkage(points), points


class TestFlatClusters:
    def test_single_cluster(self, tree_points):
        tree, _ = tree_points
        cut = hac.cut_flat_clusters(tree, 1)
        assert np.all(cut.assignments == 1)

    def test_all_singletons(self, tree_points):
        tree, _ = tree_points
        cut = hac.cut_flat_clusters(tree, tree.n_leaves)
        assert sorted(cut.assignments) == list(range(1, tree.n_leaves + 1))

    def test_partition_property(self, tree_points):
        tree, _ = tree_points
        for c in range(1, tree.n_leaves + 1):
            cut = hac.cut_flat_clusters(tree, c)
            assert cut.sizes.sum() == tree.n_leaves
            assert len(cut.sizes) == c
            assert set(cut.assignments) == set(range(1, c + 1))

    def test_two_blob_split(self, tree_points):
        tree, _ = tree_points
        cut = hac.cut_flat_clusters(tree, 2)
        assert sorted(cut.sizes) == [15, 20]

    def test_synthetic_dominant_clusters_at_c12(self):
        # two dominant blobs plus scatter: largest two of 12 flat clusters
        # jointly hold over half the points
        rng = np.random.default_rng(11)
        points = np.concatenate(
            [
                rng.normal((0, 0), 0.4, size=(60, 2)),
                rng.normal((8, 8), 0.4, size=(45, 2)),
                rng.uniform(-20, 20, size=(30, 2)),
            ]
        )
        tree = hac.hac_average_linkage(points)
        cut = hac.cut_flat_clusters(tree, 12)
        top_two = np.sort(cut.sizes)[-2:].sum()
        assert top_two / len(points) > 0.5


class TestInterClusterDistance:
    def test_single_pair(self):
        points = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert hac.inter_cluster_distance(points, [0], [1]) == pytest.approx(5.0)

    def test_hand_computed(self):
        points = np.array([[0.0], [1.0], [3.0]])
        assert hac.inter_cluster_distance(points, [0, 1], [2]) == pytest.approx(2.5)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        points = rng.normal(size=(12, 3))
        a, b = [0, 2, 4], [5, 6]
        assert hac.inter_cluster_distance(points, a, b) == pytest.approx(
            hac.inter_cluster_distance(points, b, a)
        )

    def test_overlap_rejected(self):
        points = np.zeros((4, 2))
        with pytest.raises(ValueError):
            hac.inter_cluster_distance(points, [0, 1], [1, 2])

    def test_matches_merge_height_for_intact_units(self):
        # 2 tight pairs far apart: the pairs merge intact, then the root
        # merge height equals the flat inter-cluster distance
        points = np.array([[0.0], [0.1], [10.0], [10.1]])
        tree = hac.hac_average_linkage(points)
        root = tree.merges[-1]
        d = hac.inter_cluster_distance(points, [0, 1], [2, 3])
        assert root[2] == pytest.approx(d, abs=1e-12)


class TestBigClusters:
    def test_flags_and_dbig(self):
        rng = np.random.default_rng(2)
        points = np.concatenate(
            [rng.normal(0, 0.2, size=(40, 2)), np.array([[30.0, 0.0], [0.0, 25.0]])]
        )
        tree = hac.hac_average_linkage(points)
        cut = hac.cut_flat_clusters(tree, 3)
        cut = hac.flag_big_clusters(points, cut, big_pct=10)
        assert cut.big_flags.sum() == 1
        big_id = int(np.nonzero(cut.big_flags)[0][0]) + 1
        assert cut.sizes[big_id - 1] == 40
        for cid in range(1, 4):
            if cid == big_id:
                assert cut.d_big[cid - 1] == 0.0
            else:
                expected = hac.inter_cluster_distance(
                    points, cut.members(cid), cut.members(big_id)
                )
                assert cut.d_big[cid - 1] == pytest.approx(expected)


class TestDendrogram:
    def test_full_tree(self):
        tree = hac.hac_average_linkage(np.array([[0.0], [1.0], [3.0]]))
        desc = hac.dendrogram_truncated(tree, 3)
        assert [m[2] for m in desc.merges] == [pytest.approx(1.0), pytest.approx(2.5)]
        assert desc.group_sizes == [1, 1, 1]

    def test_root_only(self):
        tree = hac.hac_average_linkage(np.array([[0.0], [1.0], [3.0]]))
        desc = hac.dendrogram_truncated(tree, 2)
        assert len(desc.merges) == 1
        assert sorted(desc.group_sizes) == [1, 2]

    def test_plot(self, tmp_path):
        rng = np.random.default_rng(0)
        tree = hac.hac_average_linkage(rng.normal(size=(30, 2)))
        desc = hac.dendrogram_truncated(tree, 12)
        out = tmp_path / "dendro.png"
        hac.plot_dendrogram(desc, str(out))
        assert out.stat().st_size > 0

    def test_json_round_trip(self):
        tree = hac.hac_average_linkage(np.array([[0.0], [1.0], [3.0]]))
        again = hac.MergeTree.from_json(tree.to_json())
        assert again == tree
