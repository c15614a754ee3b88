/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const actionList: () => [number, number];
export const chiSquare2x2: (a: number, b: number, c: number, d: number) => [number, number];
export const parseMarkup: (a: number, b: number, c: number) => [number, number];
export const scoreText: (a: number, b: number) => [number, number];
export const tTest: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
