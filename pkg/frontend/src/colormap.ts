// Displacement-magnitude colors: a small viridis-style ramp, perceptually
// ordered dark-to-bright, with the input clamped to [0, max].

const STOPS: [number, number, number][] = [
  [0.267, 0.005, 0.329],
  [0.253, 0.265, 0.53],
  [0.164, 0.471, 0.558],
  [0.134, 0.658, 0.517],
  [0.477, 0.821, 0.318],
  [0.993, 0.906, 0.144],
];

export function colormap(value: number, max: number): [number, number, number] {
  const t = max > 0 ? Math.min(1, Math.max(0, value / max)) : 0;
  const x = t * (STOPS.length - 1);
  const i = Math.min(STOPS.length - 2, Math.floor(x));
  const f = x - i;
  const a = STOPS[i];
  const b = STOPS[i + 1];
  return [
    a[0] + (b[0] - a[0]) * f,
    a[1] + (b[1] - a[1]) * f,
    a[2] + (b[2] - a[2]) * f,
  ];
}

export function flatColor(): [number, number, number] {
  return [0.75, 0.78, 0.82];
}
