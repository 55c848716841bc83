/* tslint:disable */
/* eslint-disable */

/**
 * Coarse-to-fine reconstruction of a procedural scene from its own renders,
 * advanced a few batches per animation frame.
 */
export class LiveReconstruction {
    free(): void;
    [Symbol.dispose](): void;
    batches(): number;
    done(): boolean;
    image_size(): number;
    constructor(kind: string, seed: bigint, views: number, image_size: number, final_res: number);
    /**
     * RGBA pixels of the current grid seen from training view `view`.
     */
    render_view(view: number): Uint8Array;
    /**
     * Current grid resolution per axis.
     */
    resolution(): number;
    /**
     * Runs up to `n` batches; returns the loss of the last one.
     */
    step(n: number): number;
    /**
     * RGBA pixels of training view `view`.
     */
    target(view: number): Uint8Array;
    /**
     * PSNR of the current grid against training view `view`.
     */
    view_psnr(view: number): number;
    views(): number;
}

/**
 * A voxelized procedural scene that can be rendered from any orbit angle.
 */
export class SceneView {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `kind` is `boxes`, `spheres` or `mixed`.
     */
    constructor(kind: string, count: number, resolution: number, seed: bigint);
    /**
     * RGBA pixels of a `size`×`size` render.
     */
    render(azimuth_deg: number, elevation_deg: number, size: number, samples: number): Uint8Array;
}

/**
 * Field values across one cell whose end nodes hold raw values `a` and `b`:
 * `n` triples of (t, interpolate-then-activate, activate-then-interpolate).
 */
export function relu_profile(a: number, b: number, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_livereconstruction_free: (a: number, b: number) => void;
    readonly __wbg_sceneview_free: (a: number, b: number) => void;
    readonly livereconstruction_batches: (a: number) => number;
    readonly livereconstruction_done: (a: number) => number;
    readonly livereconstruction_image_size: (a: number) => number;
    readonly livereconstruction_new: (a: number, b: number, c: bigint, d: number, e: number, f: number) => [number, number, number];
    readonly livereconstruction_render_view: (a: number, b: number) => [number, number, number, number];
    readonly livereconstruction_resolution: (a: number) => number;
    readonly livereconstruction_step: (a: number, b: number) => [number, number, number];
    readonly livereconstruction_target: (a: number, b: number) => [number, number, number, number];
    readonly livereconstruction_view_psnr: (a: number, b: number) => [number, number, number];
    readonly livereconstruction_views: (a: number) => number;
    readonly relu_profile: (a: number, b: number, c: number) => [number, number];
    readonly sceneview_new: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
    readonly sceneview_render: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
