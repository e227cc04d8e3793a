// Minimal WebGL mesh renderer: indexed triangles, per-vertex colors,
// a fixed camera orbiting the body, simple depth-based shading.

const VERT = `
attribute vec3 position;
attribute vec3 color;
uniform mat4 mvp;
varying vec3 vColor;
varying float vDepth;
void main() {
  gl_Position = mvp * vec4(position, 1.0);
  vColor = color;
  vDepth = gl_Position.z / gl_Position.w;
}
`;

const FRAG = `
precision mediump float;
varying vec3 vColor;
varying float vDepth;
void main() {
  float shade = 1.0 - 0.35 * clamp(vDepth * 0.5 + 0.5, 0.0, 1.0);
  gl_FragColor = vec4(vColor * shade, 1.0);
}
`;

function compile(gl: WebGLRenderingContext, type: number, src: string): WebGLShader {
  const shader = gl.createShader(type)!;
  gl.shaderSource(shader, src);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new Error(gl.getShaderInfoLog(shader) ?? "shader compile failed");
  }
  return shader;
}

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

function multiply(a: Float32Array, b: Float32Array): Float32Array {
  const out = new Float32Array(16);
  for (let r = 0; r < 4; r++) {
    for (let c = 0; c < 4; c++) {
      let s = 0;
      for (let k = 0; k < 4; k++) s += a[k * 4 + c] * b[r * 4 + k];
      out[r * 4 + c] = s;
    }
  }
  return out;
}

export class MeshRenderer {
  private gl: WebGLRenderingContext;
  private positionBuffer: WebGLBuffer;
  private colorBuffer: WebGLBuffer;
  private indexBuffer: WebGLBuffer;
  private indexCount = 0;
  private posLoc: number;
  private colLoc: number;
  private mvpLoc: WebGLUniformLocation;
  private angle = 0;

  constructor(private readonly canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl");
    if (!gl) throw new Error("WebGL unavailable");
    this.gl = gl;
    const program = gl.createProgram()!;
    gl.attachShader(program, compile(gl, gl.VERTEX_SHADER, VERT));
    gl.attachShader(program, compile(gl, gl.FRAGMENT_SHADER, FRAG));
    gl.linkProgram(program);
    if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
      throw new Error(gl.getProgramInfoLog(program) ?? "link failed");
    }
    gl.useProgram(program);
    this.posLoc = gl.getAttribLocation(program, "position");
    this.colLoc = gl.getAttribLocation(program, "color");
    this.mvpLoc = gl.getUniformLocation(program, "mvp")!;
    this.positionBuffer = gl.createBuffer()!;
    this.colorBuffer = gl.createBuffer()!;
    this.indexBuffer = gl.createBuffer()!;
    gl.enable(gl.DEPTH_TEST);
    gl.clearColor(0.08, 0.09, 0.11, 1.0);
  }

  setTopology(faces: number[][]): void {
    const gl = this.gl;
    const idx = new Uint16Array(faces.length * 3);
    faces.forEach((f, i) => {
      idx[3 * i] = f[0];
      idx[3 * i + 1] = f[1];
      idx[3 * i + 2] = f[2];
    });
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.indexBuffer);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, idx, gl.STATIC_DRAW);
    this.indexCount = idx.length;
  }

  draw(positions: Float32Array, colors: Float32Array): void {
    const gl = this.gl;
    this.angle += 0.004;
    gl.viewport(0, 0, this.canvas.width, this.canvas.height);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);

    gl.bindBuffer(gl.ARRAY_BUFFER, this.positionBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, positions, gl.DYNAMIC_DRAW);
    gl.enableVertexAttribArray(this.posLoc);
    gl.vertexAttribPointer(this.posLoc, 3, gl.FLOAT, false, 0, 0);

    gl.bindBuffer(gl.ARRAY_BUFFER, this.colorBuffer);
    gl.bufferData(gl.ARRAY_BUFFER, colors, gl.DYNAMIC_DRAW);
    gl.enableVertexAttribArray(this.colLoc);
    gl.vertexAttribPointer(this.colLoc, 3, gl.FLOAT, false, 0, 0);

    const aspect = this.canvas.width / Math.max(this.canvas.height, 1);
    const proj = perspective(0.9, aspect, 0.1, 20);
    const c = Math.cos(this.angle);
    const s = Math.sin(this.angle);
    // orbit around the body's vertical axis at ~1 m height
    const view = new Float32Array([
      c, 0, s, 0,
      0, 1, 0, 0,
      -s, 0, c, 0,
      0, -1.0, -2.6, 1,
    ]);
    gl.uniformMatrix4fv(this.mvpLoc, false, multiply(proj, view));
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.indexBuffer);
    gl.drawElements(gl.TRIANGLES, this.indexCount, gl.UNSIGNED_SHORT, 0);
  }
}
