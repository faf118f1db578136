import numpy as np
import pytest
import torch

from shapediff.chem import MoleculeError
from shapediff.guidance import (
    PocketModel,
    build_clash_table,
    count_clashes,
    parse_pdb_lite,
    pocket_guide,
    sample_guidance_points,
    shape_guide,
)

from helpers import methane

torch.set_default_dtype(torch.float64)


class TestShapeGuide:
    def test_direct_evaluation(self):
        x = torch.tensor([[1.0, 0.0, 0.0]])
        points = torch.zeros(2, 3)
        out, mask = shape_guide(x, points, gamma=0.2, k=2, sigma=0.5)
        assert torch.allclose(out, torch.tensor([[0.5, 0.0, 0.0]]))
        assert mask.tolist() == [True]

    def test_below_threshold_bitwise_unchanged(self):
        x = torch.tensor([[0.1, 0.0, 0.0], [5.0, 0.0, 0.0]])
        points = torch.zeros(3, 3)
        out, mask = shape_guide(x, points, gamma=0.2, k=3, sigma=0.7)
        assert torch.equal(out[0], x[0])  # mean dist 0.1 <= gamma
        assert mask.tolist() == [False, True]

    def test_sigma_zero_no_move(self):
        x = torch.tensor([[2.0, 0.0, 0.0]])
        points = torch.zeros(2, 3)
        out, mask = shape_guide(x, points, gamma=0.2, k=2, sigma=0.0)
        assert torch.equal(out, x)
        assert mask.tolist() == [True]

    def test_convex_combination_property(self):
        g = torch.Generator().manual_seed(0)
        x = torch.randn(6, 3, generator=g) * 4.0
        points = torch.randn(50, 3, generator=g) * 0.1
        sigma = torch.rand(6, generator=g)
        out, mask = shape_guide(x, points, gamma=0.2, k=2, sigma=sigma)
        d = torch.cdist(x, points)
        nn_dist, nn_idx = torch.topk(d, 2, dim=1, largest=False)
        for row in range(6):
            if not mask[row]:
                continue
            m = points[nn_idx[row]].mean(dim=0)
            expected = (1 - sigma[row]) * x[row] + sigma[row] * m
            assert torch.allclose(out[row], expected, atol=1e-12)

    def test_too_few_points(self):
        with pytest.raises(MoleculeError):
            shape_guide(torch.zeros(1, 3), torch.zeros(1, 3), 0.2, 2, 0.5)

    def test_guidance_point_cloud_size(self):
        pts = sample_guidance_points(methane().positions, per_atom=20,
                                     rng=np.random.default_rng(1))
        assert pts.shape == (5 * 20, 3)

    def test_guidance_point_spread_matches_variance(self):
        centers = np.zeros((1, 3))
        pts = sample_guidance_points(centers, per_atom=20_000, variance=0.049,
                                     rng=np.random.default_rng(2))
        assert np.var(pts, axis=0).mean() == pytest.approx(0.049, rel=0.05)


class TestPocketGuide:
    def _pocket(self, positions, elements=None, fallback=1.5):
        positions = np.asarray(positions, dtype=np.float64)
        return PocketModel(
            positions=positions,
            elements=elements or ["C"] * len(positions),
            fallback=fallback,
        )

    def test_direct_evaluation(self):
        pocket = self._pocket([[0.0, 0.0, 0.0]], fallback=1.5)
        x = torch.tensor([[1.0, 0.0, 0.0]])
        out, mask = pocket_guide(x, pocket, k=4, epsilon=0.2)
        assert torch.allclose(out, torch.tensor([[1.7, 0.0, 0.0]]), atol=1e-12)
        assert mask.tolist() == [True]
        new_dist = torch.linalg.norm(out[0]).item()
        assert abs(new_dist - (1.5 + 0.2)) < 1e-9

    def test_non_violating_unchanged(self):
        pocket = self._pocket([[0.0, 0.0, 0.0]], fallback=1.5)
        x = torch.tensor([[2.0, 0.0, 0.0]])
        out, mask = pocket_guide(x, pocket, k=4, epsilon=0.2)
        assert torch.equal(out, x)
        assert mask.tolist() == [False]

    def test_zero_epsilon_lands_on_threshold(self):
        pocket = self._pocket([[0.0, 0.0, 0.0]], fallback=1.5)
        x = torch.tensor([[1.4, 0.0, 0.0]])
        out, _ = pocket_guide(x, pocket, k=2, epsilon=0.0)
        assert torch.linalg.norm(out[0]).item() == pytest.approx(1.5, abs=1e-9)

    def test_coincident_atom_random_displacement(self):
        pocket = self._pocket([[0.0, 0.0, 0.0]], fallback=1.5)
        x = torch.zeros(1, 3)
        g = torch.Generator().manual_seed(3)
        with pytest.warns(UserWarning):
            out, _ = pocket_guide(x, pocket, k=1, epsilon=0.25, generator=g)
        assert torch.linalg.norm(out[0]).item() == pytest.approx(1.75, abs=1e-9)

    def test_multi_violation_strictly_reduces(self):
        # two pocket atoms both violated: one correction reduces the count
        pocket = self._pocket([[0.0, 0.0, 0.0], [2.2, 0.0, 0.0]], fallback=1.5)
        x = torch.tensor([[1.0, 0.0, 0.0]])

        def violated(pos):
            c = 0
            for z in pocket.positions:
                if np.linalg.norm(pos - z) < 1.5:
                    c += 1
            return c

        before = violated(x[0].numpy())
        assert before == 2
        out, _ = pocket_guide(x, pocket, k=4, epsilon=0.1)
        assert violated(out[0].numpy()) < before

    def test_per_pair_thresholds(self):
        pocket = PocketModel(
            positions=np.array([[0.0, 0.0, 0.0]]),
            elements=["N"],
            thresholds={("N", "O"): 2.5},
            fallback=1.0,
        )
        x = torch.tensor([[2.0, 0.0, 0.0]])
        out_o, mask_o = pocket_guide(x, pocket, k=1, elements=["O"], epsilon=0.0)
        assert mask_o.tolist() == [True]  # 2.0 < 2.5 for (N, O)
        out_c, mask_c = pocket_guide(x, pocket, k=1, elements=["C"], epsilon=0.0)
        assert mask_c.tolist() == [False]  # falls back to 1.0

    def test_count_clashes(self):
        pocket = self._pocket([[0.0, 0.0, 0.0]], fallback=1.5)
        assert count_clashes(np.array([[0.5, 0, 0]]), None, pocket, k=4) == 1
        assert count_clashes(np.array([[3.0, 0, 0]]), None, pocket, k=4) == 0


PDB_TEXT = """\
HEADER    TEST
ATOM      1  N   ALA A   1      11.104   6.134  -6.504  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00           C
HETATM    3  O   HOH A   2       8.000   1.000   0.000  1.00  0.00           O
END
"""


class TestPdbLite:
    def test_parse(self):
        positions, elements = parse_pdb_lite(PDB_TEXT)
        assert elements == ["N", "C", "O"]
        assert positions[0] == pytest.approx([11.104, 6.134, -6.504])

    def test_element_from_atom_name(self):
        line = "ATOM      1  N   ALA A   1      11.104   6.134  -6.504  1.00  0.00"
        positions, elements = parse_pdb_lite(line)
        assert elements == ["N"]

    def test_empty_rejected(self):
        with pytest.raises(MoleculeError):
            parse_pdb_lite("REMARK nothing here\n")


class TestClashTable:
    def test_minimum_distance_per_pair(self):
        ligand = methane()
        pocket_pos = np.array([[3.0, 0.0, 0.0], [0.0, 4.0, 0.0]])
        table = build_clash_table([(pocket_pos, ["N", "N"], ligand)])
        d = np.linalg.norm(
            pocket_pos[:, None, :] - ligand.positions[None, :, :], axis=-1
        )
        assert table[("N", "C")] == pytest.approx(
            min(np.linalg.norm(pocket_pos[0]), np.linalg.norm(pocket_pos[1]))
        )
        assert table[("N", "H")] == pytest.approx(d[:, 1:].min())
