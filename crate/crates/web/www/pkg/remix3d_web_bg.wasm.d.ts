/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_livereconstruction_free: (a: number, b: number) => void;
export const __wbg_sceneview_free: (a: number, b: number) => void;
export const livereconstruction_batches: (a: number) => number;
export const livereconstruction_done: (a: number) => number;
export const livereconstruction_image_size: (a: number) => number;
export const livereconstruction_new: (a: number, b: number, c: bigint, d: number, e: number, f: number) => [number, number, number];
export const livereconstruction_render_view: (a: number, b: number) => [number, number, number, number];
export const livereconstruction_resolution: (a: number) => number;
export const livereconstruction_step: (a: number, b: number) => [number, number, number];
export const livereconstruction_target: (a: number, b: number) => [number, number, number, number];
export const livereconstruction_view_psnr: (a: number, b: number) => [number, number, number];
export const livereconstruction_views: (a: number) => number;
export const relu_profile: (a: number, b: number, c: number) => [number, number];
export const sceneview_new: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
export const sceneview_render: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
