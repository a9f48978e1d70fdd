import numpy as np
import pytest
import torch

from cbnlab.errors import ShapeMismatchError
from cbnlab.image_export import (
    plane_to_rgb_array,
    read_ppm,
    save_plane,
    save_translation_grid,
    to_rgb_array,
    translation_grid,
)


def test_rgb_scaling_clamps_to_bytes():
    image = torch.tensor([-1.0, 0.0, 1.0, 3.0]).view(1, 1, 4).expand(3, 1, 4)
    array = to_rgb_array(image)
    assert array.shape == (1, 4, 3)
    assert array[0, :, 0].tolist() == [0, 128, 255, 255]
    with pytest.raises(ShapeMismatchError):
        to_rgb_array(torch.zeros((1, 4, 4)))


def test_plane_scaling():
    plane = torch.tensor([[0.0, 2.0], [1.0, 2.0]])
    gray = plane_to_rgb_array(plane)
    assert gray[..., 0].tolist() == [[0, 255], [128, 255]]
    assert np.all(plane_to_rgb_array(torch.full((3, 3), 5.0)) == 128)


def test_grid_layout():
    inputs = torch.zeros((2, 3, 4, 4))
    outputs = [torch.ones((2, 3, 4, 4)), -torch.ones((2, 3, 4, 4))]
    grid = translation_grid(inputs, outputs, gap=2)
    assert grid.shape == (2 * 6 - 2, 3 * 6 - 2, 3)
    assert grid[0, 6, 0] == 255
    assert grid[0, 12, 0] == 0
    with pytest.raises(ShapeMismatchError):
        translation_grid(inputs, [torch.zeros((1, 3, 4, 4))])


def test_ppm_files_round_trip(tmp_path):
    inputs = torch.zeros((1, 3, 4, 4))
    path = save_translation_grid(inputs, [torch.ones((1, 3, 4, 4))], tmp_path / "nested" / "grid.ppm")
    assert path.read_bytes()[:2] == b"P6"
    assert read_ppm(path).shape == (4, 10, 3)

    plane = save_plane(torch.arange(16.0).view(4, 4), tmp_path / "plane.ppm")
    pixels = read_ppm(plane)
    assert pixels[0, 0, 0] == 0 and pixels[3, 3, 0] == 255
