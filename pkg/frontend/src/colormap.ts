/** Fixed sequential, colorblind-safe color map (viridis anchor points,
 * linearly interpolated). One map for every overlay keeps saliency
 * renders comparable across methods and sessions; only the opacity is
 * user-adjustable.
 */

const STOPS: Array<[number, number, number]> = [
  [68, 1, 84],
  [59, 82, 139],
  [33, 145, 140],
  [94, 201, 98],
  [253, 231, 37],
];

export function colorFor(value: number): [number, number, number] {
  const v = Math.min(1, Math.max(0, value));
  const scaled = v * (STOPS.length - 1);
  const lo = Math.floor(scaled);
  const hi = Math.min(lo + 1, STOPS.length - 1);
  const t = scaled - lo;
  const mix = (a: number, b: number) => Math.round(a + (b - a) * t);
  return [
    mix(STOPS[lo][0], STOPS[hi][0]),
    mix(STOPS[lo][1], STOPS[hi][1]),
    mix(STOPS[lo][2], STOPS[hi][2]),
  ];
}

export function cssColor(value: number, alpha: number): string {
  const [r, g, b] = colorFor(value);
  return `rgba(${r}, ${g}, ${b}, ${alpha})`;
}

/** Normalize scores to [0, 1] for display. A flat map has no contrast
 * to show; callers should check the map's flags and show the
 * low-signal badge instead of an overlay. */
export function normalizeScores(scores: number[]): number[] {
  const lo = Math.min(...scores);
  const hi = Math.max(...scores);
  if (hi - lo <= 0) return scores.map(() => 0.5);
  return scores.map((s) => (s - lo) / (hi - lo));
}
