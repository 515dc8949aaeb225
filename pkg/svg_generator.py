#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SVG Generator Module

This module draws 2D chain samples as SVG: one panel per chain stage
(start, end), each with the true mode centers underneath the samples.
"""

import logging

import svgwrite

from coord_transform import data_to_canvas, transform_points

# Set up logging
logger = logging.getLogger(__name__)

PANEL_STYLE = {
    'background': '#FFFFFF',
    'frame': '#999999',
    'center': '#D62728',
    'sample': '#1F77B4',
    'sample_opacity': 0.5,
    'radius': 1.6,
    'font_size': 14,
}


def add_background_pattern(dwg, group, width, height):
    """Add a subtle background pattern to a panel"""
    pattern = dwg.pattern(id='bg_pattern', size=(10, 10), patternUnits="userSpaceOnUse")
    pattern.add(dwg.rect((0, 0), (10, 10), fill='#F8F8F8'))
    pattern.add(dwg.line((0, 0), (10, 10), stroke='#F0F0F0', stroke_width=0.5))
    dwg.defs.add(pattern)
    group.add(dwg.rect((0, 0), (width, height), fill='url(#bg_pattern)'))


def draw_frame(dwg, group, bounds, width, height, offset, padding=0.05):
    """Draw the visible region as a thin grey rectangle"""
    x_min, x_max, y_min, y_max = bounds
    x0, y0 = data_to_canvas(x_min, y_max, bounds, width, height, padding)
    x1, y1 = data_to_canvas(x_max, y_min, bounds, width, height, padding)
    group.add(dwg.rect((offset + x0, y0), (x1 - x0, y1 - y0), fill='none',
                       stroke=PANEL_STYLE['frame'], stroke_width=1))


def draw_points(dwg, group, points, bounds, width, height, offset, color, radius, opacity=1.0, padding=0.05):
    for x, y in transform_points(points, bounds, width, height, padding):
        group.add(dwg.circle(center=(offset + x, y), r=radius, fill=color, fill_opacity=opacity))


def create_panels_svg(panels, output_file, bounds, centers=None, panel_width=400, panel_height=400, style=None,
                      padding=0.05):
    """
    Create an SVG file with side-by-side scatter panels.

    Args:
        panels (list): (title, (n, 2) points) pairs, drawn left to right
        output_file (str): Path to output SVG file
        bounds (tuple): (x_min, x_max, y_min, y_max) shared by all panels
        centers (array-like, optional): True mode centers drawn in every panel
        panel_width (int, optional): Width of one panel. Defaults to 400.
        panel_height (int, optional): Height of one panel. Defaults to 400.
        style (dict, optional): Overrides of PANEL_STYLE
        padding (float, optional): Canvas padding fraction per panel

    Returns:
        str: The output path
    """
    style = {**PANEL_STYLE, **(style or {})}
    width = panel_width * len(panels)
    dwg = svgwrite.Drawing(str(output_file), (width, panel_height))
    dwg.add(dwg.rect(insert=(0, 0), size=(width, panel_height), fill=style['background']))

    # Create groups for different layers
    background_group = dwg.g(id='background')
    center_group = dwg.g(id='mode-centers')
    sample_group = dwg.g(id='samples')
    text_group = dwg.g(id='text')

    add_background_pattern(dwg, background_group, width, panel_height)
    for k, (title, points) in enumerate(panels):
        offset = k * panel_width
        draw_frame(dwg, background_group, bounds, panel_width, panel_height, offset, padding)
        if centers is not None:
            draw_points(dwg, center_group, centers, bounds, panel_width, panel_height, offset,
                        style['center'], style['radius'] * 2, padding=padding)
        draw_points(dwg, sample_group, points, bounds, panel_width, panel_height, offset,
                    style['sample'], style['radius'], style['sample_opacity'], padding)
        text_group.add(dwg.text(title, insert=(offset + panel_width / 2, style['font_size'] + 4),
                                text_anchor='middle', font_size=style['font_size'], font_family='sans-serif'))

    # Add groups to SVG in correct order
    dwg.add(background_group)
    dwg.add(center_group)
    dwg.add(sample_group)
    dwg.add(text_group)
    dwg.save()
    logger.info(f"SVG panels saved to {output_file}")
    return str(output_file)


def create_chain_svg(start, end, output_file, bounds, centers=None, label='', **kwargs):
    """Start and end samples of a batch of chains as two panels."""
    prefix = f"{label} " if label else ''
    return create_panels_svg([(f"{prefix}start", start), (f"{prefix}end", end)],
                             output_file, bounds, centers=centers, **kwargs)
