"""Axis-aligned integer rectangles shared by the detection and signal modules."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px < self.x2 and self.y <= py < self.y2

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height

    def clip(self, width: int, height: int) -> "Rect":
        """Intersect with the frame [0,width)x[0,height); may produce zero area."""
        x1 = max(0, self.x)
        y1 = max(0, self.y)
        x2 = min(width, self.x2)
        y2 = min(height, self.y2)
        return Rect(x1, y1, max(0, x2 - x1), max(0, y2 - y1))

    def to_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    @staticmethod
    def from_list(values) -> "Rect":
        x, y, w, h = (int(v) for v in values)
        return Rect(x, y, w, h)
