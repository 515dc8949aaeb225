#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for the canvas transform and the SVG chain panels.
"""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from coord_transform import data_to_canvas, points_bounds, transform_points
from svg_generator import create_chain_svg, create_panels_svg

SVG_NS = '{http://www.w3.org/2000/svg}'


class TestCoordTransform:
    def test_corners_and_center(self):
        bounds = (-1.0, 1.0, -1.0, 1.0)
        assert data_to_canvas(-1.0, 1.0, bounds, 100, 100, padding=0.0) == pytest.approx((0.0, 0.0))
        assert data_to_canvas(1.0, -1.0, bounds, 100, 100, padding=0.0) == pytest.approx((100.0, 100.0))
        assert data_to_canvas(0.0, 0.0, bounds, 100, 100) == pytest.approx((50.0, 50.0))

    def test_aspect_ratio_preserved(self):
        cx, cy = data_to_canvas(4.0, 0.0, (0.0, 4.0, 0.0, 1.0), 100, 100, padding=0.0)
        assert cx == pytest.approx(100.0)
        assert cy == pytest.approx(50.0 + 12.5)

    def test_outside_points_are_pinned(self):
        bounds = (0.0, 1.0, 0.0, 1.0)
        assert data_to_canvas(5.0, -5.0, bounds, 10, 10, 0.0) == data_to_canvas(1.0, 0.0, bounds, 10, 10, 0.0)

    def test_degenerate_bounds(self):
        with pytest.raises(ValueError):
            data_to_canvas(0.0, 0.0, (1.0, 1.0, 0.0, 1.0), 10, 10)

    def test_non_finite_points_dropped(self):
        points = np.array([[0.0, 0.0], [np.nan, 1.0], [np.inf, 0.0]])
        assert len(transform_points(points, (-1, 1, -1, 1), 10, 10)) == 1

    def test_points_bounds(self):
        assert points_bounds(np.array([[0.0, 0.0], [2.0, 1.0]]), margin=0.5) == pytest.approx((-1.0, 3.0, -0.5, 1.5))
        assert points_bounds(np.empty((0, 2))) == (-1.0, 1.0, -1.0, 1.0)


def _groups(path):
    root = ET.parse(path).getroot()
    return {g.get('id'): g for g in root.iter(f'{SVG_NS}g')}


def test_panels_layers(tmp_path):
    points = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, -1.0]])
    path = create_panels_svg([('a', points), ('b', points[:1])], tmp_path / 'p.svg', (-2, 2, -2, 2),
                             centers=np.zeros((2, 2)), panel_width=200, panel_height=100)
    root = ET.parse(path).getroot()
    assert root.get('width') == '400'
    groups = _groups(path)
    assert list(groups) == ['background', 'mode-centers', 'samples', 'text']
    assert len(groups['samples'].findall(f'{SVG_NS}circle')) == 4
    assert len(groups['mode-centers'].findall(f'{SVG_NS}circle')) == 4
    assert [t.text for t in groups['text'].findall(f'{SVG_NS}text')] == ['a', 'b']


def test_chain_svg_titles(tmp_path):
    start, end = np.zeros((3, 2)), np.ones((3, 2))
    path = create_chain_svg(start, end, tmp_path / 'chain.svg', (-2, 2, -2, 2), label='latent', padding=0.1)
    titles = [t.text for t in _groups(path)['text'].findall(f'{SVG_NS}text')]
    assert titles == ['latent start', 'latent end']
