"""Contact-sheet grids for run outputs (rows: layers, cols: filters/seeds)."""

from __future__ import annotations

from dataclasses import dataclass

from PIL import Image, ImageDraw

PAD = 4
LABEL_H = 16
LABEL_W = 64
BG = (255, 255, 255)
FG = (0, 0, 0)


@dataclass
class GridSpec:
    rows: list[str]
    cols: list[str]
    labels: bool = True

    def expected_cells(self) -> int:
        return len(self.rows) * len(self.cols)


def contact_sheet(images: list[Image.Image], spec: GridSpec) -> Image.Image:
    """Paste cells row-major (rows outer, cols inner) onto one labelled sheet."""
    if len(images) != spec.expected_cells():
        raise ValueError(f"grid {len(spec.rows)}x{len(spec.cols)} needs "
                         f"{spec.expected_cells()} images, got {len(images)}")
    cw = max(im.width for im in images)
    ch = max(im.height for im in images)
    ox = LABEL_W if spec.labels else PAD
    oy = LABEL_H if spec.labels else PAD
    sheet = Image.new("RGB", (ox + len(spec.cols) * (cw + PAD),
                              oy + len(spec.rows) * (ch + PAD)), BG)
    draw = ImageDraw.Draw(sheet)
    if spec.labels:
        for j, col in enumerate(spec.cols):
            draw.text((ox + j * (cw + PAD) + 2, 2), str(col), fill=FG)
        for i, row in enumerate(spec.rows):
            draw.text((2, oy + i * (ch + PAD) + 2), str(row), fill=FG)
    for k, im in enumerate(images):
        i, j = divmod(k, len(spec.cols))
        sheet.paste(im, (ox + j * (cw + PAD), oy + i * (ch + PAD)))
    return sheet
