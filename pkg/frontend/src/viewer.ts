// WebGL point cloud renderer: one point primitive per vertex with a
// per-vertex color, no meshing. Geometry arrives interleaved from the
// service (x,y,z,r,g,b float32); query results swap in a label color
// buffer without re-uploading positions.

const VERTEX_SHADER = `
  attribute vec3 position;
  attribute vec3 color;
  uniform mat4 viewProjection;
  uniform float pointSize;
  varying vec3 vColor;

  void main() {
    vColor = color;
    gl_Position = viewProjection * vec4(position, 1.0);
    gl_PointSize = pointSize;
  }
`;

const FRAGMENT_SHADER = `
  precision mediump float;
  varying vec3 vColor;

  void main() {
    gl_FragColor = vec4(vColor, 1.0);
  }
`;

const FLOATS_PER_POINT = 6;
const STRIDE_BYTES = FLOATS_PER_POINT * 4;

export class PointCloudViewer {
  private gl: WebGLRenderingContext;
  private program: WebGLProgram;
  private geometryBuf: WebGLBuffer;
  private labelBuf: WebGLBuffer;
  private positionLoc: number;
  private colorLoc: number;
  private matrixLoc: WebGLUniformLocation;
  private sizeLoc: WebGLUniformLocation;

  private pointCount = 0;
  private useLabelColors = false;
  private center: [number, number, number] = [0, 0, 0];
  private radius = 1;

  // Turntable camera driven by pointer drag + wheel.
  private azimuth = -0.6;
  private elevation = 0.35;
  private zoom = 2.6;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl");
    if (!gl) throw new Error("WebGL is not available in this browser");
    this.gl = gl;
    this.program = buildProgram(gl, VERTEX_SHADER, FRAGMENT_SHADER);
    this.geometryBuf = gl.createBuffer()!;
    this.labelBuf = gl.createBuffer()!;
    this.positionLoc = gl.getAttribLocation(this.program, "position");
    this.colorLoc = gl.getAttribLocation(this.program, "color");
    this.matrixLoc = gl.getUniformLocation(this.program, "viewProjection")!;
    this.sizeLoc = gl.getUniformLocation(this.program, "pointSize")!;
    this.attachOrbitControls();
  }

  /** Upload one frame's interleaved x,y,z,r,g,b buffer. */
  setFrame(interleaved: Float32Array): void {
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.geometryBuf);
    gl.bufferData(gl.ARRAY_BUFFER, interleaved, gl.STATIC_DRAW);
    this.pointCount = interleaved.length / FLOATS_PER_POINT;
    this.fitCamera(interleaved);
  }

  /** Override point colors with per-point label colors (3 floats each). */
  setLabelColors(colors: Float32Array): void {
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, this.labelBuf);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.DYNAMIC_DRAW);
    this.useLabelColors = true;
  }

  /** Fall back to the scan's own rgb colors. */
  clearLabelColors(): void {
    this.useLabelColors = false;
  }

  draw(): void {
    const gl = this.gl;
    const width = Math.max(1, Math.floor(this.canvas.clientWidth * devicePixelRatio));
    const height = Math.max(1, Math.floor(this.canvas.clientHeight * devicePixelRatio));
    if (this.canvas.width !== width || this.canvas.height !== height) {
      this.canvas.width = width;
      this.canvas.height = height;
    }
    gl.viewport(0, 0, width, height);
    gl.clearColor(0.08, 0.09, 0.11, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.enable(gl.DEPTH_TEST);
    if (this.pointCount === 0) return;

    gl.useProgram(this.program);
    const eyeDistance = this.radius * this.zoom;
    const eye: [number, number, number] = [
      this.center[0] + eyeDistance * Math.cos(this.elevation) * Math.sin(this.azimuth),
      this.center[1] + eyeDistance * Math.sin(this.elevation),
      this.center[2] + eyeDistance * Math.cos(this.elevation) * Math.cos(this.azimuth),
    ];
    const projection = perspective(Math.PI / 4, width / height, this.radius * 0.01, this.radius * 40);
    const view = lookAt(eye, this.center, [0, 1, 0]);
    gl.uniformMatrix4fv(this.matrixLoc, false, multiply(projection, view));
    gl.uniform1f(this.sizeLoc, Math.max(2, 4 * devicePixelRatio));

    gl.bindBuffer(gl.ARRAY_BUFFER, this.geometryBuf);
    gl.enableVertexAttribArray(this.positionLoc);
    gl.vertexAttribPointer(this.positionLoc, 3, gl.FLOAT, false, STRIDE_BYTES, 0);
    if (this.useLabelColors) {
      gl.bindBuffer(gl.ARRAY_BUFFER, this.labelBuf);
      gl.enableVertexAttribArray(this.colorLoc);
      gl.vertexAttribPointer(this.colorLoc, 3, gl.FLOAT, false, 0, 0);
    } else {
      gl.enableVertexAttribArray(this.colorLoc);
      gl.vertexAttribPointer(this.colorLoc, 3, gl.FLOAT, false, STRIDE_BYTES, 12);
    }
    gl.drawArrays(gl.POINTS, 0, this.pointCount);
  }

  private fitCamera(interleaved: Float32Array): void {
    let minX = Infinity, minY = Infinity, minZ = Infinity;
    let maxX = -Infinity, maxY = -Infinity, maxZ = -Infinity;
    for (let i = 0; i < interleaved.length; i += FLOATS_PER_POINT) {
      minX = Math.min(minX, interleaved[i]);
      maxX = Math.max(maxX, interleaved[i]);
      minY = Math.min(minY, interleaved[i + 1]);
      maxY = Math.max(maxY, interleaved[i + 1]);
      minZ = Math.min(minZ, interleaved[i + 2]);
      maxZ = Math.max(maxZ, interleaved[i + 2]);
    }
    if (minX > maxX) return;
    this.center = [(minX + maxX) / 2, (minY + maxY) / 2, (minZ + maxZ) / 2];
    this.radius = Math.max(
      0.05,
      Math.hypot(maxX - minX, maxY - minY, maxZ - minZ) / 2,
    );
  }

  private attachOrbitControls(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener("pointerdown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.canvas.setPointerCapture(ev.pointerId);
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      this.azimuth -= (ev.clientX - lastX) * 0.008;
      this.elevation = clamp(this.elevation + (ev.clientY - lastY) * 0.008, -1.4, 1.4);
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.draw();
    });
    this.canvas.addEventListener("pointerup", () => {
      dragging = false;
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.zoom = clamp(this.zoom * Math.exp(ev.deltaY * 0.001), 0.3, 20);
      this.draw();
    });
  }
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

function buildProgram(gl: WebGLRenderingContext, vertexSrc: string, fragmentSrc: string): WebGLProgram {
  const program = gl.createProgram()!;
  for (const [kind, src] of [
    [gl.VERTEX_SHADER, vertexSrc],
    [gl.FRAGMENT_SHADER, fragmentSrc],
  ] as const) {
    const shader = gl.createShader(kind)!;
    gl.shaderSource(shader, src);
    gl.compileShader(shader);
    if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
      throw new Error(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
    }
    gl.attachShader(program, shader);
  }
  gl.linkProgram(program);
  if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
    throw new Error(`program link failed: ${gl.getProgramInfoLog(program)}`);
  }
  return program;
}

// Column-major 4x4 helpers, just enough for a fixed-function style camera.

function perspective(fovY: number, aspect: number, near: number, far: number): Float32Array {
  const f = 1 / Math.tan(fovY / 2);
  const out = new Float32Array(16);
  out[0] = f / aspect;
  out[5] = f;
  out[10] = (far + near) / (near - far);
  out[11] = -1;
  out[14] = (2 * far * near) / (near - far);
  return out;
}

function lookAt(
  eye: readonly number[],
  target: readonly number[],
  up: readonly number[],
): Float32Array {
  const fwd = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]]);
  const side = normalize(cross(fwd, up));
  const realUp = cross(side, fwd);
  const out = new Float32Array(16);
  out[0] = side[0]; out[4] = side[1]; out[8] = side[2];
  out[1] = realUp[0]; out[5] = realUp[1]; out[9] = realUp[2];
  out[2] = -fwd[0]; out[6] = -fwd[1]; out[10] = -fwd[2];
  out[12] = -dot(side, eye);
  out[13] = -dot(realUp, eye);
  out[14] = dot(fwd, eye);
  out[15] = 1;
  return out;
}

function multiply(a: Float32Array, b: Float32Array): Float32Array {
  const out = new Float32Array(16);
  for (let col = 0; col < 4; col++) {
    for (let row = 0; row < 4; row++) {
      let sum = 0;
      for (let k = 0; k < 4; k++) sum += a[k * 4 + row] * b[col * 4 + k];
      out[col * 4 + row] = sum;
    }
  }
  return out;
}

function cross(a: readonly number[], b: readonly number[]): number[] {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function dot(a: readonly number[], b: readonly number[]): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

function normalize(v: number[]): number[] {
  const n = Math.hypot(v[0], v[1], v[2]) || 1;
  return [v[0] / n, v[1] / n, v[2] / n];
}
