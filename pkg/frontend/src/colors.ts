// Stable class -> color assignment. A class's color depends only on its
// index in the vocabulary, so the same class order always renders the same
// way; the `no label` class renders gray.

export const NO_LABEL_COLOR: readonly [number, number, number] = [0.55, 0.55, 0.55];

export function classColor(index: number): [number, number, number] {
  // Golden-angle hue walk keeps consecutive classes visually distinct.
  const hue = (index * 137.508) % 360;
  return hsvToRgb(hue, 0.72, 0.95);
}

export function hsvToRgb(h: number, s: number, v: number): [number, number, number] {
  const c = v * s;
  const hp = h / 60;
  const x = c * (1 - Math.abs((hp % 2) - 1));
  let rgb: [number, number, number];
  if (hp < 1) rgb = [c, x, 0];
  else if (hp < 2) rgb = [x, c, 0];
  else if (hp < 3) rgb = [0, c, x];
  else if (hp < 4) rgb = [0, x, c];
  else if (hp < 5) rgb = [x, 0, c];
  else rgb = [c, 0, x];
  const m = v - c;
  return [rgb[0] + m, rgb[1] + m, rgb[2] + m];
}

/** One rgb triple per point, packed for the renderer's color attribute. */
export function colorizeLabels(labels: Uint16Array, noLabelIndex: number): Float32Array {
  const out = new Float32Array(labels.length * 3);
  for (let i = 0; i < labels.length; i++) {
    const rgb = labels[i] === noLabelIndex ? NO_LABEL_COLOR : classColor(labels[i]);
    out[i * 3] = rgb[0];
    out[i * 3 + 1] = rgb[1];
    out[i * 3 + 2] = rgb[2];
  }
  return out;
}
