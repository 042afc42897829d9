// Per-frame point labels travel as base64-encoded little-endian uint16
// arrays. Decoding goes through a DataView so the byte order is explicit
// rather than whatever the host platform happens to use.

export function decodeLabels(b64: string): Uint16Array {
  const bin = atob(b64);
  if (bin.length % 2 !== 0) {
    throw new Error(`label payload has odd byte length ${bin.length}`);
  }
  const bytes = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) bytes[i] = bin.charCodeAt(i);
  const view = new DataView(bytes.buffer);
  const out = new Uint16Array(bytes.length / 2);
  for (let i = 0; i < out.length; i++) out[i] = view.getUint16(i * 2, true);
  return out;
}

export function encodeLabels(labels: Uint16Array): string {
  const bytes = new Uint8Array(labels.length * 2);
  const view = new DataView(bytes.buffer);
  for (let i = 0; i < labels.length; i++) view.setUint16(i * 2, labels[i], true);
  let bin = "";
  for (let i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
  return btoa(bin);
}
